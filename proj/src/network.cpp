#include "s3d/network.hpp"

#include <cmath>
#include <random>

#include "s3d/error.hpp"

namespace s3d {

using nlohmann::json;

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::MaxPool3d: return "maxpool3d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "conv3d") return LayerKind::Conv3d;
  if (name == "maxpool3d") return LayerKind::MaxPool3d;
  if (name == "relu") return LayerKind::Relu;
  if (name == "sigmoid") return LayerKind::Sigmoid;
  throw ConfigError("unknown layer kind '" + name + "'");
}

namespace {

LayerSpec feature(LayerSpec spec) {
  spec.is_feature_layer = true;
  return spec;
}

json extent_json(const Extent3& e) { return json::array({e.t, e.h, e.w}); }

Extent3 extent_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("layer extent must be a [t, h, w] array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

NetworkConfig NetworkConfig::tiny(int num_classes) {
  NetworkConfig c;
  c.name = "s3d-tiny";
  c.input = {64, 16, 16, 3};
  c.num_classes = num_classes;
  c.spans = {{8, 4, 2, 1}, {0.25, 0.5, 0.75, 1.0}};
  const Extent3 k3{3, 3, 3}, p1{1, 1, 1};
  const int widths[] = {3, 8, 16, 32, 32};
  const Extent3 pools[] = {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}};
  for (int b = 0; b < 4; ++b) {
    c.layers.push_back(LayerSpec::conv(widths[b], widths[b + 1], k3, {}, p1));
    c.layers.push_back(LayerSpec::relu());
    c.layers.push_back(LayerSpec::pool(pools[b], pools[b]));
  }
  c.layers.back().is_feature_layer = true;
  for (int a = 0; a < 3; ++a) {
    c.layers.push_back(LayerSpec::conv(32, 32, {3, 1, 1}, {2, 1, 1}, {1, 0, 0}));
    c.layers.push_back(feature(LayerSpec::relu()));
  }
  return c;
}

NetworkConfig NetworkConfig::full_scale(int num_classes) {
  NetworkConfig c;
  c.name = "s3d";
  c.input = {256, 112, 112, 3};
  c.num_classes = num_classes;
  c.spans = {{32, 16, 8, 4, 2, 1}, {0.25, 0.5, 0.75, 1.0}};
  const Extent3 k3{3, 3, 3}, p1{1, 1, 1}, half{2, 2, 2};
  auto conv_relu = [&](int in, int out) {
    c.layers.push_back(LayerSpec::conv(in, out, k3, {}, p1));
    c.layers.push_back(LayerSpec::relu());
  };
  conv_relu(3, 64);
  c.layers.push_back(LayerSpec::pool({1, 2, 2}, {1, 2, 2}));
  conv_relu(64, 128);
  c.layers.push_back(LayerSpec::pool(half, half));
  conv_relu(128, 256);
  conv_relu(256, 256);
  c.layers.push_back(LayerSpec::pool(half, half));
  conv_relu(256, 512);
  conv_relu(512, 512);
  c.layers.push_back(LayerSpec::pool(half, half));
  conv_relu(512, 512);
  conv_relu(512, 512);
  c.layers.back().is_feature_layer = true;  // conv5: L/8 x H/16 x W/16
  c.layers.push_back(LayerSpec::pool(half, half, {0, 1, 1}));
  c.layers.push_back(LayerSpec::conv(512, 512, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}));
  c.layers.push_back(feature(LayerSpec::relu()));
  for (int a = 0; a < 4; ++a) {
    c.layers.push_back(LayerSpec::conv(512, 512, {3, 1, 1}, {2, 1, 1}, {1, 0, 0}));
    c.layers.push_back(feature(LayerSpec::relu()));
  }
  return c;
}

std::vector<Volume> NetworkConfig::layer_volumes() const {
  std::vector<Volume> out;
  out.reserve(layers.size());
  Volume v = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      v = layers[i].output_volume(v);
    } catch (const ConfigError& e) {
      throw ConfigError("layer " + std::to_string(i) + " (" + layer_kind_name(layers[i].kind) +
                        "): " + e.what());
    }
    out.push_back(v);
  }
  return out;
}

std::vector<Volume> NetworkConfig::feature_volumes() const {
  const auto volumes = layer_volumes();
  std::vector<Volume> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].is_feature_layer) out.push_back(volumes[i]);
  }
  return out;
}

std::vector<int> NetworkConfig::feature_lengths() const {
  std::vector<int> out;
  for (const auto& v : feature_volumes()) out.push_back(static_cast<int>(v.length));
  return out;
}

LayerSpec NetworkConfig::predictor_spec(const Volume& f) const {
  return LayerSpec::conv(static_cast<int>(f.channels),
                         predictions_per_cell() * static_cast<int>(spans.ratios.size()),
                         {3, static_cast<int>(f.height), static_cast<int>(f.width)}, {}, {1, 0, 0});
}

void NetworkConfig::validate() const {
  if (num_classes < 1) throw ConfigError("network: num_classes must be >= 1");
  if (input.length < 1 || input.height < 1 || input.width < 1 || input.channels < 1) {
    throw ConfigError("network: input dimensions must be positive");
  }
  spans.validate();
  loss.validate();
  if (!(optimizer.learning_rate >= 0.0) || !(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw ConfigError("network: learning rate must be >= 0 and momentum in [0, 1)");
  }
  const auto lengths = feature_lengths();
  if (lengths != spans.layer_lengths) {
    std::string got, want;
    for (int l : lengths) got += (got.empty() ? "" : ",") + std::to_string(l);
    for (int l : spans.layer_lengths) want += (want.empty() ? "" : ",") + std::to_string(l);
    throw ConfigError("network: feature layer temporal lengths {" + got +
                      "} do not match span grid layer lengths {" + want + "}");
  }
  for (const auto& f : feature_volumes()) predictor_spec(f).output_volume(f);
}

json NetworkConfig::to_json() const {
  json layers_json = json::array();
  for (const auto& l : layers) {
    json lj{{"kind", layer_kind_name(l.kind)}};
    if (l.kind == LayerKind::Conv3d) {
      lj["in_channels"] = l.in_channels;
      lj["out_channels"] = l.out_channels;
    }
    if (l.kind == LayerKind::Conv3d || l.kind == LayerKind::MaxPool3d) {
      lj["kernel"] = extent_json(l.kernel);
      lj["stride"] = extent_json(l.stride);
      lj["padding"] = extent_json(l.padding);
    }
    if (l.is_feature_layer) lj["feature"] = true;
    layers_json.push_back(lj);
  }
  return json{{"name", name},
              {"input", {input.length, input.height, input.width, input.channels}},
              {"num_classes", num_classes},
              {"layer_lengths", spans.layer_lengths},
              {"ratios", spans.ratios},
              {"layers", layers_json},
              {"loss", {{"alpha", loss.alpha}, {"beta", loss.beta}}},
              {"optimizer", {{"learning_rate", optimizer.learning_rate}, {"momentum", optimizer.momentum}}}};
}

NetworkConfig NetworkConfig::from_json(const json& j) {
  try {
    NetworkConfig c;
    c.name = j.value("name", std::string("custom"));
    const auto& in = j.at("input");
    if (!in.is_array() || in.size() != 4) throw ConfigError("network: input must be [L, H, W, C]");
    c.input = {in[0].get<Index>(), in[1].get<Index>(), in[2].get<Index>(), in[3].get<Index>()};
    c.num_classes = j.at("num_classes").get<int>();
    c.spans.layer_lengths = j.at("layer_lengths").get<std::vector<int>>();
    c.spans.ratios = j.at("ratios").get<std::vector<double>>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      if (l.kind == LayerKind::Conv3d) {
        l.in_channels = lj.at("in_channels").get<int>();
        l.out_channels = lj.at("out_channels").get<int>();
      }
      if (l.kind == LayerKind::Conv3d || l.kind == LayerKind::MaxPool3d) {
        l.kernel = extent_from(lj.at("kernel"));
        l.stride = extent_from(lj.at("stride"));
        l.padding = extent_from(lj.at("padding"));
      }
      l.is_feature_layer = lj.value("feature", false);
      c.layers.push_back(l);
    }
    if (j.contains("loss")) {
      c.loss.alpha = j["loss"].value("alpha", 1.0);
      c.loss.beta = j["loss"].value("beta", 1.0);
    }
    if (j.contains("optimizer")) {
      c.optimizer.learning_rate = j["optimizer"].value("learning_rate", OptimizerSettings{}.learning_rate);
      c.optimizer.momentum = j["optimizer"].value("momentum", 0.9);
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

std::vector<PredictionVector> to_prediction_vectors(const Matrix& predictions, int num_classes) {
  std::vector<PredictionVector> out;
  out.reserve(static_cast<std::size_t>(predictions.rows()));
  for (Index i = 0; i < predictions.rows(); ++i) {
    PredictionVector p;
    p.class_scores = predictions.row(i).head(num_classes).transpose();
    p.act_score = predictions(i, num_classes);
    p.offsets = {predictions(i, num_classes + 1), predictions(i, num_classes + 2)};
    out.push_back(std::move(p));
  }
  return out;
}

NetworkParams NetworkParams::zeros_like(const NetworkConfig& config) {
  NetworkParams p;
  for (const auto& l : config.layers) {
    if (l.has_parameters()) p.layers.push_back(ConvParams<double>::zeros(l));
  }
  for (const auto& f : config.feature_volumes()) {
    p.predictors.push_back(ConvParams<double>::zeros(config.predictor_spec(f)));
  }
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_arrays(Params& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    fn("conv" + std::to_string(i) + ".weights", p.layers[i].weights);
    fn("conv" + std::to_string(i) + ".bias", p.layers[i].bias);
  }
  for (std::size_t i = 0; i < p.predictors.size(); ++i) {
    fn("predictor" + std::to_string(i) + ".weights", p.predictors[i].weights);
    fn("predictor" + std::to_string(i) + ".bias", p.predictors[i].bias);
  }
}

}  // namespace

void NetworkParams::for_each_array(const std::function<void(const std::string&, Eigen::Ref<Vector>)>& fn) {
  visit_arrays(*this, [&](const std::string& name, auto& a) {
    Eigen::Map<Vector> flat(a.data(), a.size());
    fn(name, flat);
  });
}

void NetworkParams::for_each_array(
    const std::function<void(const std::string&, Eigen::Ref<const Vector>)>& fn) const {
  visit_arrays(*this, [&](const std::string& name, const auto& a) {
    Eigen::Map<const Vector> flat(a.data(), a.size());
    fn(name, flat);
  });
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each_array([&](const std::string&, Eigen::Ref<const Vector> a) { n += static_cast<std::size_t>(a.size()); });
  return n;
}

bool operator==(const NetworkParams& a, const NetworkParams& b) {
  auto same = [](const std::vector<ConvParams<double>>& x, const std::vector<ConvParams<double>>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].weights.rows() != y[i].weights.rows() || x[i].weights.cols() != y[i].weights.cols() ||
          x[i].bias.size() != y[i].bias.size() || x[i].weights != y[i].weights || x[i].bias != y[i].bias) {
        return false;
      }
    }
    return true;
  };
  return same(a.layers, b.layers) && same(a.predictors, b.predictors);
}

Network::Network(NetworkConfig config) : Network(config, NetworkParams::zeros_like(config)) {}

Network::Network(NetworkConfig config, NetworkParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto expected = NetworkParams::zeros_like(config_);
  auto shapes_match = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].weights.rows() != y[i].weights.rows() || x[i].weights.cols() != y[i].weights.cols() ||
          x[i].bias.size() != y[i].bias.size()) {
        return false;
      }
    }
    return true;
  };
  if (!shapes_match(params_.layers, expected.layers) || !shapes_match(params_.predictors, expected.predictors)) {
    throw ConfigError("network: parameter shapes do not match the configuration");
  }
  grid_ = tile_default_spans(config_.spans);
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    if (config_.layers[i].is_feature_layer) feature_layer_index_.push_back(static_cast<int>(i));
  }
}

Network Network::initialized(NetworkConfig config, std::uint64_t seed) {
  Network net(std::move(config));
  std::mt19937_64 rng(seed);
  auto init = [&](ConvParams<double>& p) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(p.weights.rows())));
    for (Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = normal(rng);
    p.bias.setZero();
  };
  for (auto& p : net.params_.layers) init(p);
  for (auto& p : net.params_.predictors) init(p);
  return net;
}

Matrix Network::forward(const TensorD& video, ForwardCache* cache) const {
  if (volume_of(video) != config_.input) {
    throw InputError("network: input " + shape_string(video.shape()) + " does not match configured " +
                     config_.input.str());
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.activations.clear();
  c.argmax.assign(config_.layers.size(), {});
  c.activations.reserve(config_.layers.size() + 1);
  c.activations.push_back(video);

  std::size_t conv = 0;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const LayerSpec& spec = config_.layers[i];
    const TensorD& x = c.activations.back();
    switch (spec.kind) {
      case LayerKind::Conv3d:
        c.activations.push_back(conv3d_forward(x, params_.layers[conv++], spec));
        break;
      case LayerKind::MaxPool3d: {
        auto pooled = maxpool3d_forward(x, spec);
        c.argmax[i] = std::move(pooled.argmax);
        c.activations.push_back(std::move(pooled.output));
        break;
      }
      case LayerKind::Relu: c.activations.push_back(relu_forward(x)); break;
      case LayerKind::Sigmoid: c.activations.push_back(sigmoid_forward(x)); break;
    }
  }

  const int k = config_.num_classes;
  const Index per_cell = config_.predictions_per_cell();
  c.predictions.resize(static_cast<Index>(grid_.size()), per_cell);
  Index row = 0;
  for (std::size_t f = 0; f < feature_layer_index_.size(); ++f) {
    const TensorD& feat = c.activations[feature_layer_index_[f] + 1];
    const LayerSpec spec = config_.predictor_spec(volume_of(feat));
    const TensorD raw = conv3d_forward(feat, params_.predictors[f], spec);
    // [L_f, 1, 1, (K+3) R] reinterpreted row-major as (L_f R) x (K+3).
    const Index rows = raw.size() / per_cell;
    c.predictions.middleRows(row, rows) = Eigen::Map<const Matrix>(raw.data(), rows, per_cell);
    row += rows;
  }
  c.predictions.col(k) = c.predictions.col(k).unaryExpr([](double z) { return sigmoid(z); });
  if (!cache) return std::move(local.predictions);
  return c.predictions;
}

std::vector<PredictionVector> Network::predict(const TensorD& video) const {
  return to_prediction_vectors(forward(video), config_.num_classes);
}

NetworkParams Network::backward(const ForwardCache& cache, const Matrix& grad_predictions) const {
  if (grad_predictions.rows() != cache.predictions.rows() || grad_predictions.cols() != cache.predictions.cols()) {
    throw InputError("network backward: gradient shape does not match predictions");
  }
  const int k = config_.num_classes;
  const Index per_cell = config_.predictions_per_cell();
  Matrix g = grad_predictions;
  g.col(k).array() *= cache.predictions.col(k).array() * (1.0 - cache.predictions.col(k).array());

  NetworkParams grads;
  grads.layers.resize(params_.layers.size());
  grads.predictors.resize(params_.predictors.size());

  // Gradients flowing into each layer output, accumulated from predictors.
  std::vector<TensorD> grad_at(config_.layers.size());
  Index row = 0;
  for (std::size_t f = 0; f < feature_layer_index_.size(); ++f) {
    const int li = feature_layer_index_[f];
    const TensorD& feat = cache.activations[li + 1];
    const LayerSpec spec = config_.predictor_spec(volume_of(feat));
    const Volume out = spec.output_volume(volume_of(feat));
    TensorD grad_raw(out.shape());
    const Index rows = grad_raw.size() / per_cell;
    Eigen::Map<Matrix>(grad_raw.data(), rows, per_cell) = g.middleRows(row, rows);
    row += rows;
    auto cg = conv3d_backward(grad_raw, feat, params_.predictors[f], spec);
    grads.predictors[f] = {std::move(cg.weights), std::move(cg.bias)};
    if (grad_at[li].empty()) {
      grad_at[li] = std::move(cg.input);
    } else {
      grad_at[li].flat() += cg.input.flat();
    }
  }

  std::size_t conv = params_.layers.size();
  TensorD upstream;
  for (std::size_t ii = config_.layers.size(); ii-- > 0;) {
    if (!grad_at[ii].empty()) {
      if (upstream.empty()) {
        upstream = std::move(grad_at[ii]);
      } else {
        upstream.flat() += grad_at[ii].flat();
      }
    }
    const LayerSpec& spec = config_.layers[ii];
    if (spec.kind == LayerKind::Conv3d) --conv;
    if (upstream.empty()) continue;  // nothing downstream depends on this layer yet
    const TensorD& x = cache.activations[ii];
    const TensorD& y = cache.activations[ii + 1];
    switch (spec.kind) {
      case LayerKind::Conv3d: {
        auto cg = conv3d_backward(upstream, x, params_.layers[conv], spec, ii > 0);
        grads.layers[conv] = {std::move(cg.weights), std::move(cg.bias)};
        upstream = std::move(cg.input);
        break;
      }
      case LayerKind::MaxPool3d: upstream = maxpool3d_backward(upstream, cache.argmax[ii], volume_of(x)); break;
      case LayerKind::Relu: upstream = relu_backward(std::move(upstream), y); break;
      case LayerKind::Sigmoid: upstream = sigmoid_backward(std::move(upstream), y); break;
    }
  }
  // Conv layers past the last feature layer get no gradient.
  std::size_t ci = 0;
  for (const auto& spec : config_.layers) {
    if (!spec.has_parameters()) continue;
    if (grads.layers[ci].weights.size() == 0) grads.layers[ci] = ConvParams<double>::zeros(spec);
    ++ci;
  }
  return grads;
}

}  // namespace s3d
