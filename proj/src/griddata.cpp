#include "pdml/griddata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pdml {

namespace fs = std::filesystem;

ImageGrid::ImageGrid(int height, int width, int channels)
    : ImageGrid(height, width, channels,
                std::vector<double>(static_cast<std::size_t>(std::max(height, 0)) *
                                    std::max(width, 0) * std::max(channels, 0))) {}

ImageGrid::ImageGrid(int height, int width, int channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height < 1 || width < 1 || channels < 1) {
    throw std::invalid_argument("ImageGrid: dimensions must be >= 1");
  }
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("ImageGrid: value count does not match dimensions");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("ImageGrid: non-finite value");
  }
}

PseudoMask::PseudoMask(int height, int width, Label fill)
    : height_(height), width_(width) {
  if (height < 1 || width < 1) throw std::invalid_argument("PseudoMask: dimensions must be >= 1");
  labels_.assign(static_cast<std::size_t>(height) * width, fill);
}

PseudoMask::PseudoMask(int height, int width, std::vector<Label> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (height < 1 || width < 1) throw std::invalid_argument("PseudoMask: dimensions must be >= 1");
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("PseudoMask: label count does not match dimensions");
  }
}

std::size_t PseudoMask::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [](Label l) { return l != kIgnore; }));
}

PseudoMask points_to_pseudo_mask(const PointAnnotationSet& points, int height, int width) {
  PseudoMask mask(height, width);
  for (const auto& p : points.points) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
      throw std::invalid_argument("point (" + std::to_string(p.row) + ", " +
                                  std::to_string(p.col) + ") out of bounds");
    }
    if (p.label < 0 || p.label >= kIgnore) {
      throw std::invalid_argument("point label " + std::to_string(p.label) + " out of range");
    }
    if (mask.labeled(p.row, p.col)) {
      throw std::invalid_argument("duplicate point at (" + std::to_string(p.row) + ", " +
                                  std::to_string(p.col) + ")");
    }
    mask.at(p.row, p.col) = p.label;
  }
  return mask;
}

PointAnnotationSet pseudo_mask_to_points(const PseudoMask& mask, std::string image_id) {
  PointAnnotationSet out{std::move(image_id), {}};
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask.labeled(r, c)) out.points.push_back({r, c, mask.at(r, c)});
    }
  }
  return out;
}

ClassSet class_set(const PseudoMask& mask) {
  ClassSet out;
  for (Label l : mask.labels()) {
    if (l != kIgnore) out.insert(l);
  }
  return out;
}

void validate_sample(const Sample& s, int num_classes) {
  const auto check_mask = [&](const PseudoMask& m, const char* what) {
    if (m.height() != s.image.height() || m.width() != s.image.width()) {
      throw std::invalid_argument(s.id + ": " + what + " dimensions differ from image");
    }
    for (Label l : m.labels()) {
      if (l != kIgnore && (l < 0 || l >= num_classes)) {
        throw std::invalid_argument(s.id + ": " + what + " label " + std::to_string(l) +
                                    " >= num_classes " + std::to_string(num_classes));
      }
    }
  };
  check_mask(s.mask, "mask");
  if (s.ground_truth) check_mask(*s.ground_truth, "ground truth");
}

namespace {

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  int width = 0;
  int height = 0;
  int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const fs::path& path) {
  const auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ": " + why);
  };
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    fail("not a binary PGM/PPM file");
  }
  PnmHeader h;
  h.kind = magic[1];
  int fields[3] = {};
  for (int& field : fields) {
    // Skip whitespace and comments.
    int ch = in.get();
    while (ch != EOF) {
      if (ch == '#') {
        while (ch != EOF && ch != '\n') ch = in.get();
      } else if (std::isspace(ch)) {
        ch = in.get();
      } else {
        break;
      }
    }
    if (ch == EOF || !std::isdigit(ch)) fail("malformed header");
    long value = 0;
    while (ch != EOF && std::isdigit(ch)) {
      value = value * 10 + (ch - '0');
      if (value > 1'000'000) fail("header value too large");
      ch = in.get();
    }
    if (ch == EOF || !std::isspace(ch)) fail("malformed header");
    field = static_cast<int>(value);
  }
  h.width = fields[0];
  h.height = fields[1];
  h.maxval = fields[2];
  if (h.width < 1 || h.height < 1) fail("zero dimension");
  if (h.maxval < 1 || h.maxval > 255) fail("maxval must be in [1, 255]");
  return h;
}

std::vector<unsigned char> read_pixels(std::istream& in, std::size_t count, const fs::path& path) {
  std::vector<unsigned char> bytes(count);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return bytes;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

ImageGrid load_image(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const PnmHeader h = read_pnm_header(in, path);
  const int channels = h.kind == '5' ? 1 : 3;
  const auto bytes =
      read_pixels(in, static_cast<std::size_t>(h.width) * h.height * channels, path);
  std::vector<double> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] > h.maxval) throw FormatError(path.string() + ": sample exceeds maxval");
    values[i] = static_cast<double>(bytes[i]) / h.maxval;
  }
  return ImageGrid(h.height, h.width, channels, std::move(values));
}

void save_image(const fs::path& path, const ImageGrid& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("save_image: only 1- or 3-channel images can be written");
  }
  auto out = open_out(path, std::ios::binary);
  out << 'P' << (image.channels() == 1 ? '5' : '6') << '\n'
      << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(image.values().size());
  std::transform(image.values().begin(), image.values().end(), bytes.begin(), [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

PseudoMask load_mask(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const PnmHeader h = read_pnm_header(in, path);
  if (h.kind != '5') throw FormatError(path.string() + ": masks must be single-channel PGM");
  const auto bytes = read_pixels(in, static_cast<std::size_t>(h.width) * h.height, path);
  return PseudoMask(h.height, h.width, std::vector<Label>(bytes.begin(), bytes.end()));
}

void save_mask(const fs::path& path, const PseudoMask& mask) {
  auto out = open_out(path, std::ios::binary);
  out << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
  std::vector<unsigned char> bytes(mask.labels().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const Label l = mask.labels()[i];
    if (l < 0 || l > kIgnore) throw std::invalid_argument("save_mask: label out of byte range");
    bytes[i] = static_cast<unsigned char>(l);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

PointAnnotationSet load_points(const fs::path& path, std::string image_id) {
  auto in = open_in(path);
  PointAnnotationSet out{std::move(image_id), {}};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    PointAnnotation p;
    if (!(fields >> p.row)) continue;  // blank line
    std::string extra;
    if (!(fields >> p.col >> p.label) || (fields >> extra)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'row col class'");
    }
    out.points.push_back(p);
  }
  return out;
}

void save_points(const fs::path& path, const PointAnnotationSet& points) {
  auto out = open_out(path);
  for (const auto& p : points.points) out << p.row << ' ' << p.col << ' ' << p.label << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Manifest load_manifest(const fs::path& path) {
  auto in = open_in(path);
  const fs::path base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      std::istringstream header(line.substr(hash + 1));
      std::string key;
      int value = 0;
      if (header >> key && key == "num_classes:" && header >> value) m.num_classes = value;
      line.erase(hash);
    }
    std::istringstream fields(line);
    std::string image, annotation, gt, extra;
    if (!(fields >> image)) continue;
    if (!(fields >> annotation)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'image_path annotation_path [gt_mask_path]'");
    }
    ManifestEntry e{resolve(image), resolve(annotation), std::nullopt};
    if (fields >> gt) e.ground_truth = resolve(gt);
    if (fields >> extra) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": too many fields");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  auto out = open_out(path);
  const fs::path base = path.parent_path();
  const auto rel = [&](const fs::path& p) {
    return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string();
  };
  if (manifest.num_classes) out << "# num_classes: " << *manifest.num_classes << '\n';
  for (const auto& e : manifest.entries) {
    out << rel(e.image) << ' ' << rel(e.annotation);
    if (e.ground_truth) out << ' ' << rel(*e.ground_truth);
    out << '\n';
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Dataset load_dataset(const fs::path& manifest_path, std::optional<int> num_classes) {
  const Manifest manifest = load_manifest(manifest_path);
  Dataset ds;
  Label max_label = -1;
  for (const auto& e : manifest.entries) {
    Sample s;
    s.id = e.image.stem().string();
    s.image = load_image(e.image);
    s.points = load_points(e.annotation, s.id);
    s.mask = points_to_pseudo_mask(s.points, s.image.height(), s.image.width());
    if (e.ground_truth) {
      s.ground_truth = load_mask(*e.ground_truth);
      if (!s.ground_truth->is_dense()) {
        throw FormatError(e.ground_truth->string() + ": ground truth must be dense");
      }
    }
    for (const auto& p : s.points.points) max_label = std::max(max_label, p.label);
    if (s.ground_truth) {
      for (Label l : s.ground_truth->labels()) max_label = std::max(max_label, l);
    }
    ds.samples.push_back(std::move(s));
  }
  ds.num_classes = num_classes.value_or(manifest.num_classes.value_or(max_label + 1));
  if (ds.num_classes < 1 || ds.num_classes > kMaxClasses) {
    throw std::invalid_argument("num_classes must be in [1, 255]");
  }
  for (const auto& s : ds.samples) validate_sample(s, ds.num_classes);
  return ds;
}

}  // namespace pdml
