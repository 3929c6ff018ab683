#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3d/layers.hpp"
#include "s3d/loss.hpp"
#include "s3d/spans.hpp"

namespace s3d {

struct OptimizerSettings {
  double learning_rate = 3e-3;
  double momentum = 0.9;
};

/// Architecture plus the training hyper-parameters that travel with a model.
struct NetworkConfig {
  std::string name = "s3d-tiny";
  Volume input{64, 16, 16, 3};
  int num_classes = 3;
  SpanGridConfig spans{{8, 4, 2, 1}, {0.25, 0.5, 0.75, 1.0}};
  std::vector<LayerSpec> layers;
  LossWeights loss;
  OptimizerSettings optimizer;

  /// Desk-scale network: four conv+relu+pool blocks down to an 8x1x1 base
  /// feature, then three stride-2 temporal convs.
  static NetworkConfig tiny(int num_classes = 3);
  /// Full-size layout over 256x112x112 input with six feature layers
  /// {32, 16, 8, 4, 2, 1}.
  static NetworkConfig full_scale(int num_classes = 20);

  /// Output volume of every layer, in order.
  std::vector<Volume> layer_volumes() const;
  /// Volumes of the layers flagged as feature layers.
  std::vector<Volume> feature_volumes() const;
  std::vector<int> feature_lengths() const;
  int predictions_per_cell() const { return num_classes + 3; }
  std::size_t prediction_count() const { return spans.span_count(); }

  /// Predictor conv for a feature layer: kernel (3, H_f, W_f), temporal pad 1.
  LayerSpec predictor_spec(const Volume& feature) const;

  /// Throws ConfigError when the layer stack does not produce the span grid's
  /// layer lengths, or any other structural problem.
  void validate() const;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

/// One row per default span: (c_1 .. c_K, c_act, dct, dlt).
struct PredictionVector {
  Vector class_scores;
  double act_score = 0.5;
  Offsets offsets;
};

std::vector<PredictionVector> to_prediction_vectors(const Matrix& predictions, int num_classes);

struct NetworkParams {
  std::vector<ConvParams<double>> layers;      // one per conv layer, in stack order
  std::vector<ConvParams<double>> predictors;  // one per feature layer

  static NetworkParams zeros_like(const NetworkConfig& config);

  /// Visits every weight matrix and bias vector in declaration order: conv
  /// layers (weights then bias), then predictors.
  void for_each_array(const std::function<void(const std::string&, Eigen::Ref<Vector>)>& fn);
  void for_each_array(const std::function<void(const std::string&, Eigen::Ref<const Vector>)>& fn) const;

  std::size_t parameter_count() const;
  friend bool operator==(const NetworkParams& a, const NetworkParams& b);
};

struct ForwardCache {
  std::vector<TensorD> activations;  // [0] is the input, [i + 1] the output of layer i
  std::vector<std::vector<Index>> argmax;
  std::vector<TensorD> feature_inputs;
  Matrix predictions;
};

class Network {
 public:
  explicit Network(NetworkConfig config);
  Network(NetworkConfig config, NetworkParams params);

  /// He-normal conv weights, zero biases.
  static Network initialized(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  const NetworkParams& params() const { return params_; }
  NetworkParams& params() { return params_; }
  const DefaultSpanGrid& grid() const { return grid_; }

  /// Prediction matrix in grid order, sigmoid applied to the activity column.
  Matrix forward(const TensorD& video, ForwardCache* cache = nullptr) const;
  std::vector<PredictionVector> predict(const TensorD& video) const;

  /// Parameter gradients for d loss / d predictions.
  NetworkParams backward(const ForwardCache& cache, const Matrix& grad_predictions) const;

 private:
  NetworkConfig config_;
  NetworkParams params_;
  DefaultSpanGrid grid_;
  std::vector<int> feature_layer_index_;
};

}  // namespace s3d
