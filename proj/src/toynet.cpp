#include "pdml/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>

namespace pdml {

void NetConfig::validate() const {
  if (channels_in < 1) throw std::invalid_argument("NetConfig: channels_in must be >= 1");
  if (conv_channels.empty()) throw std::invalid_argument("NetConfig: need at least one conv layer");
  for (int c : conv_channels) {
    if (c < 1) throw std::invalid_argument("NetConfig: conv layer width must be >= 1");
  }
  if (embedding_dim() < 2) throw std::invalid_argument("NetConfig: embedding dim must be >= 2");
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw std::invalid_argument("NetConfig: num_classes must be in [2, 255]");
  }
  if (!(embedding_gain > 0.0) || !std::isfinite(embedding_gain)) {
    throw std::invalid_argument("NetConfig: embedding_gain must be > 0");
  }
}

ParamLayout::ParamLayout(const NetConfig& cfg) {
  cfg.validate();
  std::size_t offset = 0;
  int in = cfg.channels_in;
  for (int out : cfg.conv_channels) {
    Conv layer{in, out, offset, 0};
    offset += static_cast<std::size_t>(9) * in * out;
    layer.biases = offset;
    offset += static_cast<std::size_t>(out);
    conv.push_back(layer);
    in = out;
  }
  classifier_weights = offset;
  offset += static_cast<std::size_t>(cfg.embedding_dim()) * cfg.num_classes;
  classifier_biases = offset;
  offset += static_cast<std::size_t>(cfg.num_classes);
  total = offset;
}

ModelParams::ModelParams(NetConfig cfg, std::vector<double> values)
    : cfg_(std::move(cfg)), layout_(cfg_), values_(std::move(values)) {
  if (values_.size() != layout_.total) {
    throw std::invalid_argument("ModelParams: expected " + std::to_string(layout_.total) +
                                " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("ModelParams: non-finite parameter");
  }
}

void ModelParams::restore(std::span<const double> flat) {
  if (flat.size() != values_.size()) {
    throw std::invalid_argument("ModelParams::restore: size mismatch");
  }
  std::copy(flat.begin(), flat.end(), values_.begin());
}

std::uint64_t ModelParams::fingerprint() const {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values_) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

ModelParams init_params(const NetConfig& cfg) {
  const ParamLayout layout(cfg);
  std::vector<double> values(layout.total, 0.0);
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t l = 0; l < layout.conv.size(); ++l) {
    const auto& layer = layout.conv[l];
    const double gain = l + 1 == layout.conv.size() ? cfg.embedding_gain : 1.0;
    const double bound = gain * std::sqrt(6.0 / (9.0 * layer.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = layer.weights; i < layer.biases; ++i) values[i] = dist(rng);
  }
  const double bound = std::sqrt(6.0 / cfg.embedding_dim()) / cfg.embedding_gain;
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = layout.classifier_weights; i < layout.classifier_biases; ++i) {
    values[i] = dist(rng);
  }
  return ModelParams(cfg, std::move(values));
}

namespace {

// 3x3 same-padding convolution; weights laid out [ky][kx][in][out].
FeatureMap conv3x3(const FeatureMap& in, std::span<const double> params,
                   const ParamLayout::Conv& layer, bool relu) {
  const int h = in.height();
  const int w = in.width();
  const int nin = layer.in;
  const int nout = layer.out;
  FeatureMap out(h, w, nout);
  const double* weights = params.data() + layer.weights;
  const double* biases = params.data() + layer.biases;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double* o = out.pixel(r, c).data();
      std::copy(biases, biases + nout, o);
      for (int ky = 0; ky < 3; ++ky) {
        const int rr = r + ky - 1;
        if (rr < 0 || rr >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int cc = c + kx - 1;
          if (cc < 0 || cc >= w) continue;
          const double* x = in.pixel(rr, cc).data();
          const double* wk = weights + static_cast<std::size_t>(ky * 3 + kx) * nin * nout;
          for (int i = 0; i < nin; ++i) {
            const double xi = x[i];
            const double* wi = wk + static_cast<std::size_t>(i) * nout;
            for (int k = 0; k < nout; ++k) o[k] += wi[k] * xi;
          }
        }
      }
      if (relu) {
        for (int k = 0; k < nout; ++k) o[k] = o[k] > 0.0 ? o[k] : 0.0;
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients into `grad` and returns the gradient on
// the layer input (skipped when `need_input_grad` is false).
FeatureMap conv3x3_backward(const FeatureMap& in, const FeatureMap& d_out,
                            std::span<const double> params, const ParamLayout::Conv& layer,
                            std::span<double> grad, bool need_input_grad) {
  const int h = in.height();
  const int w = in.width();
  const int nin = layer.in;
  const int nout = layer.out;
  FeatureMap d_in = need_input_grad ? FeatureMap(h, w, nin) : FeatureMap();
  const double* weights = params.data() + layer.weights;
  double* g_weights = grad.data() + layer.weights;
  double* g_biases = grad.data() + layer.biases;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double* go = d_out.pixel(r, c).data();
      bool any = false;
      for (int k = 0; k < nout; ++k) {
        g_biases[k] += go[k];
        any = any || go[k] != 0.0;
      }
      if (!any) continue;
      for (int ky = 0; ky < 3; ++ky) {
        const int rr = r + ky - 1;
        if (rr < 0 || rr >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int cc = c + kx - 1;
          if (cc < 0 || cc >= w) continue;
          const double* x = in.pixel(rr, cc).data();
          const std::size_t base = static_cast<std::size_t>(ky * 3 + kx) * nin * nout;
          double* gx = need_input_grad ? d_in.pixel(rr, cc).data() : nullptr;
          for (int i = 0; i < nin; ++i) {
            const double xi = x[i];
            double* gw = g_weights + base + static_cast<std::size_t>(i) * nout;
            const double* wi = weights + base + static_cast<std::size_t>(i) * nout;
            double acc = 0.0;
            for (int k = 0; k < nout; ++k) {
              gw[k] += go[k] * xi;
              acc += wi[k] * go[k];
            }
            if (gx) gx[i] += acc;
          }
        }
      }
    }
  }
  return d_in;
}

FeatureMap as_feature_map(const ImageGrid& image) {
  FeatureMap m(image.height(), image.width(), image.channels());
  std::copy(image.values().begin(), image.values().end(), m.values().begin());
  return m;
}

}  // namespace

EmbeddingMap forward_features(const ImageGrid& image, const ModelParams& params,
                              ForwardCache* cache) {
  const auto& cfg = params.config();
  if (image.channels() != cfg.channels_in) {
    throw std::invalid_argument("forward_features: image has " +
                                std::to_string(image.channels()) + " channels, network expects " +
                                std::to_string(cfg.channels_in));
  }
  const auto& layout = params.layout();
  std::vector<FeatureMap> layers;
  FeatureMap current = as_feature_map(image);
  for (std::size_t l = 0; l < layout.conv.size(); ++l) {
    const bool last = l + 1 == layout.conv.size();
    FeatureMap next = conv3x3(current, params.values(), layout.conv[l], !last);
    if (cache) layers.push_back(next);
    current = std::move(next);
  }
  EmbeddingMap emb(current.height(), current.width(), current.depth());
  emb.values() = std::move(current.values());
  if (cache) {
    cache->input = image;
    cache->layers = std::move(layers);
    cache->embedding = emb;
    cache->params_fingerprint = params.fingerprint();
    cache->valid = true;
  }
  return emb;
}

ScoreMap forward_classifier(const EmbeddingMap& emb, const ModelParams& params) {
  const auto& cfg = params.config();
  const int d = cfg.embedding_dim();
  const int k = cfg.num_classes;
  if (emb.dim() != d) {
    throw std::invalid_argument("forward_classifier: embedding dim " + std::to_string(emb.dim()) +
                                " != " + std::to_string(d));
  }
  const auto& layout = params.layout();
  const double* weights = params.values().data() + layout.classifier_weights;
  const double* biases = params.values().data() + layout.classifier_biases;
  ScoreMap scores(emb.height(), emb.width(), k);
  for (int r = 0; r < emb.height(); ++r) {
    for (int c = 0; c < emb.width(); ++c) {
      const auto e = emb.pixel(r, c);
      double* z = scores.pixel(r, c).data();
      std::copy(biases, biases + k, z);
      for (int i = 0; i < d; ++i) {
        const double* wi = weights + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) z[j] += wi[j] * e[i];
      }
      const double zmax = *std::max_element(z, z + k);
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        z[j] = std::exp(z[j] - zmax);
        sum += z[j];
      }
      for (int j = 0; j < k; ++j) z[j] /= sum;
    }
  }
  return scores;
}

ForwardCache forward(const ImageGrid& image, const ModelParams& params) {
  ForwardCache cache;
  forward_features(image, params, &cache);
  cache.scores = forward_classifier(cache.embedding, params);
  return cache;
}

PseudoMask predict_labels(const ScoreMap& scores) {
  PseudoMask out(scores.height(), scores.width(), Label{0});
  for (int r = 0; r < scores.height(); ++r) {
    for (int c = 0; c < scores.width(); ++c) {
      const auto p = scores.pixel(r, c);
      out.at(r, c) = static_cast<Label>(std::max_element(p.begin(), p.end()) - p.begin());
    }
  }
  return out;
}

std::vector<double> backward(const ForwardCache& cache, const ModelParams& params,
                             const FeatureMap* d_logits, const FeatureMap* d_embedding) {
  if (!cache.valid) throw std::logic_error("backward: no forward cache");
  if (cache.params_fingerprint != params.fingerprint()) {
    throw std::logic_error("backward: forward cache is stale (parameters changed)");
  }
  const auto& cfg = params.config();
  const auto& layout = params.layout();
  const int h = cache.embedding.height();
  const int w = cache.embedding.width();
  const int d = cfg.embedding_dim();
  const int k = cfg.num_classes;
  const auto check_shape = [&](const FeatureMap* m, int depth, const char* what) {
    if (m && (m->height() != h || m->width() != w || m->depth() != depth)) {
      throw std::invalid_argument(std::string("backward: ") + what + " shape mismatch");
    }
  };
  check_shape(d_logits, k, "logit gradient");
  check_shape(d_embedding, d, "embedding gradient");

  std::vector<double> grad(params.size(), 0.0);
  FeatureMap d_emb(h, w, d);
  if (d_embedding) d_emb.values() = d_embedding->values();

  if (d_logits) {
    const double* weights = params.values().data() + layout.classifier_weights;
    double* g_weights = grad.data() + layout.classifier_weights;
    double* g_biases = grad.data() + layout.classifier_biases;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const auto gz = d_logits->pixel(r, c);
        const auto e = cache.embedding.pixel(r, c);
        auto ge = d_emb.pixel(r, c);
        for (int j = 0; j < k; ++j) g_biases[j] += gz[j];
        for (int i = 0; i < d; ++i) {
          const double* wi = weights + static_cast<std::size_t>(i) * k;
          double* gwi = g_weights + static_cast<std::size_t>(i) * k;
          double acc = 0.0;
          for (int j = 0; j < k; ++j) {
            gwi[j] += e[i] * gz[j];
            acc += wi[j] * gz[j];
          }
          ge[i] += acc;
        }
      }
    }
  }

  FeatureMap upstream = std::move(d_emb);
  const FeatureMap input = as_feature_map(cache.input);
  for (std::size_t l = layout.conv.size(); l-- > 0;) {
    const bool last = l + 1 == layout.conv.size();
    if (!last) {
      // ReLU: gradient passes where the activation is positive.
      const auto& act = cache.layers[l].values();
      auto& g = upstream.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(act[i] > 0.0)) g[i] = 0.0;
      }
    }
    const FeatureMap& layer_in = l == 0 ? input : cache.layers[l - 1];
    upstream = conv3x3_backward(layer_in, upstream, params.values(), layout.conv[l], grad, l > 0);
  }
  return grad;
}

GradCheckReport numeric_grad_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> point,
                                   std::span<const double> analytic, std::size_t num_samples,
                                   double step, std::uint64_t seed, double floor) {
  if (point.size() != analytic.size()) {
    throw std::invalid_argument("numeric_grad_check: gradient size mismatch");
  }
  std::vector<std::size_t> indices(point.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  if (num_samples < indices.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(num_samples);
    std::sort(indices.begin(), indices.end());
  }
  std::vector<double> x(point.begin(), point.end());
  GradCheckReport report;
  for (std::size_t idx : indices) {
    const double saved = x[idx];
    x[idx] = saved + step;
    const double plus = loss(x);
    x[idx] = saved - step;
    const double minus = loss(x);
    x[idx] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double abs_err = std::abs(numeric - analytic[idx]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[idx]), floor});
    const double rel_err = abs_err / denom;
    if (rel_err > report.max_relative_error) {
      report.max_relative_error = rel_err;
      report.worst_index = idx;
    }
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    ++report.checked;
  }
  return report;
}

}  // namespace pdml
