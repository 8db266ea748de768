#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace latree {

enum class LayerKind { FC, CNN, GRU, LSTM };

inline constexpr std::array<LayerKind, 4> kAllLayerKinds = {
    LayerKind::FC, LayerKind::CNN, LayerKind::GRU, LayerKind::LSTM};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);
constexpr bool is_recurrent(LayerKind kind) {
  return kind == LayerKind::GRU || kind == LayerKind::LSTM;
}

// Encoded as valid=0, same=1 so that range conditions can split on it.
enum class Padding { Valid = 0, Same = 1 };

std::string_view to_string(Padding padding);
Padding parse_padding(std::string_view name);

struct DenseShape {
  std::int64_t in_dim = 0;
  std::int64_t out_dim = 0;
  bool operator==(const DenseShape&) const = default;
};

struct ConvShape {
  std::int64_t in_height = 0;
  std::int64_t in_width = 0;
  std::int64_t kernel_height = 0;
  std::int64_t kernel_width = 0;
  std::int64_t in_channel = 0;
  std::int64_t out_channel = 0;
  std::int64_t stride = 1;
  Padding padding = Padding::Same;
  bool operator==(const ConvShape&) const = default;
};

struct RecurrentShape {
  std::int64_t in_dim = 0;
  std::int64_t out_dim = 0;
  std::int64_t step = 0;
  bool operator==(const RecurrentShape&) const = default;
};

/// Structural hyperparameters of one layer. Only the fields that are legal
/// for the layer kind exist; the shape alternative is tied to the kind.
class StructureConfig {
 public:
  static StructureConfig fc(std::int64_t in_dim, std::int64_t out_dim);
  static StructureConfig conv(const ConvShape& shape);
  static StructureConfig gru(std::int64_t in_dim, std::int64_t out_dim, std::int64_t step);
  static StructureConfig lstm(std::int64_t in_dim, std::int64_t out_dim, std::int64_t step);

  LayerKind kind() const { return kind_; }

  const DenseShape& dense() const { return std::get<DenseShape>(shape_); }
  const ConvShape& conv() const { return std::get<ConvShape>(shape_); }
  const RecurrentShape& recurrent() const { return std::get<RecurrentShape>(shape_); }

  // The width shared with neighbouring layers: channels for CNN, dims otherwise.
  std::int64_t in_width() const;
  std::int64_t out_width() const;
  void set_in_width(std::int64_t value);
  void set_out_width(std::int64_t value);

  // Throws DataError when a count is non-positive, stride is outside {1,2},
  // or valid padding would leave no output.
  void validate() const;

  bool operator==(const StructureConfig&) const = default;

 private:
  StructureConfig(LayerKind kind, std::variant<DenseShape, ConvShape, RecurrentShape> shape)
      : kind_(kind), shape_(shape) {}

  LayerKind kind_;
  std::variant<DenseShape, ConvShape, RecurrentShape> shape_;
};

struct ConvOutput {
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool operator==(const ConvOutput&) const = default;
};

// TensorFlow convolution arithmetic. same: ceil(in/stride); valid:
// floor((in-k)/stride)+1.
ConvOutput conv_output_dims(std::int64_t in_h, std::int64_t in_w, std::int64_t k_h,
                            std::int64_t k_w, std::int64_t stride, Padding padding);

/// Condition-search features in canonical order: structure fields (table
/// order), then mem_in, mem_out, mem_inter, param_size.
struct FeatureVector {
  LayerKind kind = LayerKind::FC;
  std::vector<double> values;

  double operator[](std::size_t j) const { return values[j]; }
  double mem_in() const;
  double mem_out() const;
  double mem_inter() const;
  double param_size() const;
  bool operator==(const FeatureVector&) const = default;
};

std::span<const std::string_view> feature_names(LayerKind kind);
std::size_t feature_count(LayerKind kind);
std::optional<std::size_t> feature_index(LayerKind kind, std::string_view name);

// Width coordinates are the only ones layer expansion may grow.
enum class WidthField { In, Out };
std::optional<WidthField> width_field_for_feature(LayerKind kind, std::size_t j);

/// Regression inputs: [flops, mem, param_size] plus step for recurrent kinds.
struct ExplanatoryVector {
  double flops = 0;
  double mem = 0;
  double param_size = 0;
  std::optional<double> step;

  std::size_t size() const { return step ? 4 : 3; }
  double operator[](std::size_t i) const;
  bool operator==(const ExplanatoryVector&) const = default;
};

std::size_t explanatory_count(LayerKind kind);
std::span<const std::string_view> explanatory_names(LayerKind kind);

FeatureVector derive_features(const StructureConfig& config);
ExplanatoryVector derive_explanatory(const StructureConfig& config);

// Canonical text encoding: {"layer_type": ..., "config": {...}} with only the
// fields legal for the kind. Unknown or missing fields are a DataError.
nlohmann::json config_to_json(const StructureConfig& config);
StructureConfig config_from_json(const nlohmann::json& j);

// Compact single-line form, stable across runs; used for hashing and logs.
std::string canonical_text(const StructureConfig& config);

}  // namespace latree
