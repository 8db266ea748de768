#include "latree/core_types.hpp"

#include <algorithm>
#include <set>

#include "latree/error.hpp"

namespace latree {

namespace {

constexpr std::array<std::string_view, 6> kDenseFeatures = {
    "in_dim", "out_dim", "mem_in", "mem_out", "mem_inter", "param_size"};
constexpr std::array<std::string_view, 12> kConvFeatures = {
    "in_height",  "in_width", "kernel_height", "kernel_width",
    "in_channel", "out_channel", "padding",    "stride",
    "mem_in",     "mem_out",  "mem_inter",     "param_size"};
constexpr std::array<std::string_view, 7> kRecurrentFeatures = {
    "in_dim", "out_dim", "step", "mem_in", "mem_out", "mem_inter", "param_size"};

constexpr std::array<std::string_view, 3> kPlainExplanatory = {"flops", "mem", "param_size"};
constexpr std::array<std::string_view, 4> kRecurrentExplanatory = {"flops", "mem", "param_size",
                                                                   "step"};

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct MemoryFeatures {
  double mem_in = 0;
  double mem_out = 0;
  double mem_inter = 0;
  double param_size = 0;
};

MemoryFeatures memory_features(const StructureConfig& config) {
  switch (config.kind()) {
    case LayerKind::FC: {
      const auto& s = config.dense();
      return {double(s.in_dim), double(s.out_dim), 0.0, double(s.in_dim * s.out_dim + s.out_dim)};
    }
    case LayerKind::CNN: {
      const auto& s = config.conv();
      const auto out = conv_output_dims(s.in_height, s.in_width, s.kernel_height, s.kernel_width,
                                        s.stride, s.padding);
      const double out_area = double(out.height) * double(out.width);
      const double kernel_area = double(s.kernel_height) * double(s.kernel_width);
      return {double(s.in_height) * double(s.in_width) * double(s.in_channel),
              out_area * double(s.out_channel), out_area * kernel_area * double(s.in_channel),
              kernel_area * double(s.in_channel) * double(s.out_channel) + 1.0};
    }
    case LayerKind::GRU: {
      const auto& s = config.recurrent();
      return {double(s.step * s.in_dim), double(s.step * s.out_dim), 3.0 * double(s.step * s.out_dim),
              3.0 * double(s.out_dim) * double(s.in_dim + s.out_dim + 1)};
    }
    case LayerKind::LSTM: {
      const auto& s = config.recurrent();
      return {2.0 * double(s.step * s.in_dim), 2.0 * double(s.step * s.out_dim),
              4.0 * double(s.step * s.out_dim),
              4.0 * double(s.out_dim) * double(s.in_dim + s.out_dim + 1)};
    }
  }
  throw DataError("unknown layer kind");
}

void require_positive(std::int64_t value, std::string_view field) {
  if (value < 1) {
    throw DataError("field '" + std::string(field) + "' must be a positive count, got " +
                    std::to_string(value));
  }
}

std::int64_t take_count(const nlohmann::json& obj, const char* field) {
  if (!obj.contains(field)) throw DataError(std::string("missing field '") + field + "'");
  const auto& v = obj.at(field);
  if (!v.is_number_integer()) {
    throw DataError(std::string("field '") + field + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::FC: return "FC";
    case LayerKind::CNN: return "CNN";
    case LayerKind::GRU: return "GRU";
    case LayerKind::LSTM: return "LSTM";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto kind : kAllLayerKinds) {
    if (to_string(kind) == upper) return kind;
  }
  throw DataError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(Padding padding) {
  return padding == Padding::Valid ? "valid" : "same";
}

Padding parse_padding(std::string_view name) {
  if (name == "valid") return Padding::Valid;
  if (name == "same") return Padding::Same;
  throw DataError("unknown padding '" + std::string(name) + "'");
}

StructureConfig StructureConfig::fc(std::int64_t in_dim, std::int64_t out_dim) {
  return {LayerKind::FC, DenseShape{in_dim, out_dim}};
}

StructureConfig StructureConfig::conv(const ConvShape& shape) { return {LayerKind::CNN, shape}; }

StructureConfig StructureConfig::gru(std::int64_t in_dim, std::int64_t out_dim,
                                     std::int64_t step) {
  return {LayerKind::GRU, RecurrentShape{in_dim, out_dim, step}};
}

StructureConfig StructureConfig::lstm(std::int64_t in_dim, std::int64_t out_dim,
                                      std::int64_t step) {
  return {LayerKind::LSTM, RecurrentShape{in_dim, out_dim, step}};
}

std::int64_t StructureConfig::in_width() const {
  if (kind_ == LayerKind::CNN) return conv().in_channel;
  if (kind_ == LayerKind::FC) return dense().in_dim;
  return recurrent().in_dim;
}

std::int64_t StructureConfig::out_width() const {
  if (kind_ == LayerKind::CNN) return conv().out_channel;
  if (kind_ == LayerKind::FC) return dense().out_dim;
  return recurrent().out_dim;
}

void StructureConfig::set_in_width(std::int64_t value) {
  std::visit(
      [value](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConvShape>) {
          s.in_channel = value;
        } else {
          s.in_dim = value;
        }
      },
      shape_);
}

void StructureConfig::set_out_width(std::int64_t value) {
  std::visit(
      [value](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConvShape>) {
          s.out_channel = value;
        } else {
          s.out_dim = value;
        }
      },
      shape_);
}

void StructureConfig::validate() const {
  switch (kind_) {
    case LayerKind::FC:
      require_positive(dense().in_dim, "in_dim");
      require_positive(dense().out_dim, "out_dim");
      return;
    case LayerKind::CNN: {
      const auto& s = conv();
      require_positive(s.in_height, "in_height");
      require_positive(s.in_width, "in_width");
      require_positive(s.kernel_height, "kernel_height");
      require_positive(s.kernel_width, "kernel_width");
      require_positive(s.in_channel, "in_channel");
      require_positive(s.out_channel, "out_channel");
      if (s.stride != 1 && s.stride != 2) {
        throw DataError("stride must be 1 or 2, got " + std::to_string(s.stride));
      }
      conv_output_dims(s.in_height, s.in_width, s.kernel_height, s.kernel_width, s.stride,
                       s.padding);
      return;
    }
    case LayerKind::GRU:
    case LayerKind::LSTM:
      require_positive(recurrent().in_dim, "in_dim");
      require_positive(recurrent().out_dim, "out_dim");
      require_positive(recurrent().step, "step");
      return;
  }
}

ConvOutput conv_output_dims(std::int64_t in_h, std::int64_t in_w, std::int64_t k_h,
                            std::int64_t k_w, std::int64_t stride, Padding padding) {
  if (in_h < 1 || in_w < 1 || k_h < 1 || k_w < 1 || stride < 1) {
    throw DataError("convolution geometry requires positive counts");
  }
  if (padding == Padding::Same) return {ceil_div(in_h, stride), ceil_div(in_w, stride)};
  if (k_h > in_h || k_w > in_w) {
    throw DataError("valid padding requires kernel <= input extent (kernel " +
                    std::to_string(k_h) + "x" + std::to_string(k_w) + ", input " +
                    std::to_string(in_h) + "x" + std::to_string(in_w) + ")");
  }
  return {(in_h - k_h) / stride + 1, (in_w - k_w) / stride + 1};
}

std::span<const std::string_view> feature_names(LayerKind kind) {
  switch (kind) {
    case LayerKind::FC: return kDenseFeatures;
    case LayerKind::CNN: return kConvFeatures;
    case LayerKind::GRU:
    case LayerKind::LSTM: return kRecurrentFeatures;
  }
  return {};
}

std::size_t feature_count(LayerKind kind) { return feature_names(kind).size(); }

std::optional<std::size_t> feature_index(LayerKind kind, std::string_view name) {
  const auto names = feature_names(kind);
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

std::optional<WidthField> width_field_for_feature(LayerKind kind, std::size_t j) {
  const auto names = feature_names(kind);
  if (j >= names.size()) return std::nullopt;
  const auto name = names[j];
  if (name == "in_dim" || name == "in_channel") return WidthField::In;
  if (name == "out_dim" || name == "out_channel") return WidthField::Out;
  return std::nullopt;
}

double FeatureVector::mem_in() const { return values[values.size() - 4]; }
double FeatureVector::mem_out() const { return values[values.size() - 3]; }
double FeatureVector::mem_inter() const { return values[values.size() - 2]; }
double FeatureVector::param_size() const { return values[values.size() - 1]; }

double ExplanatoryVector::operator[](std::size_t i) const {
  switch (i) {
    case 0: return flops;
    case 1: return mem;
    case 2: return param_size;
    default: return step.value_or(0.0);
  }
}

std::size_t explanatory_count(LayerKind kind) { return is_recurrent(kind) ? 4 : 3; }

std::span<const std::string_view> explanatory_names(LayerKind kind) {
  if (is_recurrent(kind)) return kRecurrentExplanatory;
  return kPlainExplanatory;
}

FeatureVector derive_features(const StructureConfig& config) {
  config.validate();
  const auto m = memory_features(config);
  FeatureVector f;
  f.kind = config.kind();
  switch (config.kind()) {
    case LayerKind::FC:
      f.values = {double(config.dense().in_dim), double(config.dense().out_dim)};
      break;
    case LayerKind::CNN: {
      const auto& s = config.conv();
      f.values = {double(s.in_height),     double(s.in_width),   double(s.kernel_height),
                  double(s.kernel_width),  double(s.in_channel), double(s.out_channel),
                  double(static_cast<int>(s.padding)), double(s.stride)};
      break;
    }
    case LayerKind::GRU:
    case LayerKind::LSTM: {
      const auto& s = config.recurrent();
      f.values = {double(s.in_dim), double(s.out_dim), double(s.step)};
      break;
    }
  }
  f.values.insert(f.values.end(), {m.mem_in, m.mem_out, m.mem_inter, m.param_size});
  return f;
}

ExplanatoryVector derive_explanatory(const StructureConfig& config) {
  config.validate();
  const auto m = memory_features(config);
  ExplanatoryVector x;
  x.mem = m.mem_in + m.mem_out + m.mem_inter;
  x.param_size = m.param_size;
  switch (config.kind()) {
    case LayerKind::FC: {
      const auto& s = config.dense();
      x.flops = 2.0 * double(s.in_dim) * double(s.out_dim) + double(s.out_dim);
      break;
    }
    case LayerKind::CNN: {
      const auto& s = config.conv();
      const auto out = conv_output_dims(s.in_height, s.in_width, s.kernel_height, s.kernel_width,
                                        s.stride, s.padding);
      x.flops = 2.0 * double(out.height) * double(out.width) * double(s.kernel_height) *
                double(s.kernel_width) * double(s.in_channel) * double(s.out_channel);
      break;
    }
    case LayerKind::GRU:
    case LayerKind::LSTM:
      x.flops = 2.0 * double(config.recurrent().step) * m.param_size;
      x.step = double(config.recurrent().step);
      break;
  }
  return x;
}

nlohmann::json config_to_json(const StructureConfig& config) {
  nlohmann::json body;
  switch (config.kind()) {
    case LayerKind::FC:
      body = {{"in_dim", config.dense().in_dim}, {"out_dim", config.dense().out_dim}};
      break;
    case LayerKind::CNN: {
      const auto& s = config.conv();
      body = {{"in_height", s.in_height},
              {"in_width", s.in_width},
              {"kernel_height", s.kernel_height},
              {"kernel_width", s.kernel_width},
              {"in_channel", s.in_channel},
              {"out_channel", s.out_channel},
              {"padding", std::string(to_string(s.padding))},
              {"stride", s.stride}};
      break;
    }
    case LayerKind::GRU:
    case LayerKind::LSTM:
      body = {{"in_dim", config.recurrent().in_dim},
              {"out_dim", config.recurrent().out_dim},
              {"step", config.recurrent().step}};
      break;
  }
  return {{"layer_type", std::string(to_string(config.kind()))}, {"config", body}};
}

StructureConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("layer_type") || !j.contains("config")) {
    throw DataError("config record needs 'layer_type' and 'config'");
  }
  if (!j.at("layer_type").is_string()) throw DataError("'layer_type' must be a string");
  const auto kind = parse_layer_kind(j.at("layer_type").get<std::string>());
  const auto& body = j.at("config");
  if (!body.is_object()) throw DataError("'config' must be an object");

  std::set<std::string> allowed;
  switch (kind) {
    case LayerKind::FC: allowed = {"in_dim", "out_dim"}; break;
    case LayerKind::CNN:
      allowed = {"in_height",  "in_width",    "kernel_height", "kernel_width",
                 "in_channel", "out_channel", "padding",       "stride"};
      break;
    default: allowed = {"in_dim", "out_dim", "step"}; break;
  }
  for (const auto& [key, _] : body.items()) {
    if (!allowed.count(key)) {
      throw DataError("field '" + key + "' is not legal for " + std::string(to_string(kind)));
    }
  }

  StructureConfig config = StructureConfig::fc(1, 1);
  switch (kind) {
    case LayerKind::FC:
      config = StructureConfig::fc(take_count(body, "in_dim"), take_count(body, "out_dim"));
      break;
    case LayerKind::CNN: {
      ConvShape s;
      s.in_height = take_count(body, "in_height");
      s.in_width = take_count(body, "in_width");
      s.kernel_height = take_count(body, "kernel_height");
      s.kernel_width = take_count(body, "kernel_width");
      s.in_channel = take_count(body, "in_channel");
      s.out_channel = take_count(body, "out_channel");
      s.stride = take_count(body, "stride");
      if (!body.contains("padding") || !body.at("padding").is_string()) {
        throw DataError("CNN config needs string field 'padding'");
      }
      s.padding = parse_padding(body.at("padding").get<std::string>());
      config = StructureConfig::conv(s);
      break;
    }
    case LayerKind::GRU:
      config = StructureConfig::gru(take_count(body, "in_dim"), take_count(body, "out_dim"),
                                    take_count(body, "step"));
      break;
    case LayerKind::LSTM:
      config = StructureConfig::lstm(take_count(body, "in_dim"), take_count(body, "out_dim"),
                                     take_count(body, "step"));
      break;
  }
  config.validate();
  return config;
}

std::string canonical_text(const StructureConfig& config) { return config_to_json(config).dump(); }

}  // namespace latree
