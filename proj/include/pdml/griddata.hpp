#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdml {

using Label = std::int32_t;

// Reserved label for "no annotation". Masks are stored as 8-bit PGM, so valid
// class ids live in [0, 255) and num_classes may not exceed 255.
inline constexpr Label kIgnore = 255;
inline constexpr int kMaxClasses = 255;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// H x W x C raster of finite reals, channel-interleaved.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(int height, int width, int channels);
  ImageGrid(int height, int width, int channels, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }

  double at(int row, int col, int ch) const { return values_[index(row, col, ch)]; }
  double& at(int row, int col, int ch) { return values_[index(row, col, ch)]; }

  std::span<const double> pixel(int row, int col) const {
    return {values_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<double> pixel(int row, int col) {
    return {values_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
  }

  const std::vector<double>& values() const { return values_; }

  bool operator==(const ImageGrid&) const = default;

 private:
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

// Per-pixel class ids with kIgnore marking unlabeled pixels. Also used for
// dense ground truth (no kIgnore), predictions and extension candidates.
class PseudoMask {
 public:
  PseudoMask() = default;
  PseudoMask(int height, int width, Label fill = kIgnore);
  PseudoMask(int height, int width, std::vector<Label> labels);

  int height() const { return height_; }
  int width() const { return width_; }

  Label at(int row, int col) const { return labels_[index(row, col)]; }
  Label& at(int row, int col) { return labels_[index(row, col)]; }
  bool labeled(int row, int col) const { return at(row, col) != kIgnore; }

  std::size_t labeled_count() const;
  bool is_dense() const { return labeled_count() == labels_.size(); }

  std::vector<Label>& labels() { return labels_; }
  const std::vector<Label>& labels() const { return labels_; }

  bool operator==(const PseudoMask&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<Label> labels_;
};

using CandidateMask = PseudoMask;
using ClassSet = std::set<Label>;

struct PointAnnotation {
  int row = 0;
  int col = 0;
  Label label = 0;

  bool operator==(const PointAnnotation&) const = default;
  auto operator<=>(const PointAnnotation&) const = default;
};

// Annotated pixels of one image, in annotation-file order.
struct PointAnnotationSet {
  std::string image_id;
  std::vector<PointAnnotation> points;
};

struct Sample {
  std::string id;
  ImageGrid image;
  PointAnnotationSet points;
  PseudoMask mask;
  std::optional<PseudoMask> ground_truth;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
};

// Throws std::invalid_argument on out-of-bounds or duplicate coordinates.
PseudoMask points_to_pseudo_mask(const PointAnnotationSet& points, int height, int width);

// Raster-order extraction of the labeled pixels.
PointAnnotationSet pseudo_mask_to_points(const PseudoMask& mask, std::string image_id = {});

ClassSet class_set(const PseudoMask& mask);

// Checks class ids against num_classes and mask/image shape agreement.
void validate_sample(const Sample& sample, int num_classes);

// PGM (P5) or PPM (P6), maxval <= 255; values normalized by maxval.
ImageGrid load_image(const std::filesystem::path& path);
// Writes P5 for 1 channel, P6 for 3 channels. Values are clamped to [0, 1]
// and quantized to round(v * 255).
void save_image(const std::filesystem::path& path, const ImageGrid& image);

PseudoMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const PseudoMask& mask);

// One "row col class" triple per line; '#' starts a comment.
PointAnnotationSet load_points(const std::filesystem::path& path, std::string image_id = {});
void save_points(const std::filesystem::path& path, const PointAnnotationSet& points);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path annotation;
  std::optional<std::filesystem::path> ground_truth;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  // From a "# num_classes: N" header line, if present.
  std::optional<int> num_classes;
};

// Relative paths resolve against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// num_classes comes from the argument, else the manifest header, else the
// largest label seen + 1.
Dataset load_dataset(const std::filesystem::path& manifest_path,
                     std::optional<int> num_classes = std::nullopt);

}  // namespace pdml
