#include "effnet/model_zoo.hpp"

#include <algorithm>
#include <cctype>

namespace effnet {

const char* to_string(PresetName name) {
  switch (name) {
  case PresetName::BrainTumor: return "brain";
  case PresetName::BreastCancer: return "breast";
  case PresetName::ChestCancer: return "chest";
  case PresetName::SkinCancer: return "skin";
  }
  return "?";
}

PresetName preset_from_string(const std::string& text) {
  std::string s = text;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "brain" || s == "braintumor") return PresetName::BrainTumor;
  if (s == "breast" || s == "breastcancer") return PresetName::BreastCancer;
  if (s == "chest" || s == "chestcancer") return PresetName::ChestCancer;
  if (s == "skin" || s == "skincancer") return PresetName::SkinCancer;
  throw ArgumentError("unknown preset '" + text + "' (expected brain, breast, chest or skin)");
}

namespace {

ArchitectureSpec chest_topology(std::string name, std::size_t classes) {
  ArchitectureSpec a;
  a.name = std::move(name);
  a.num_classes = classes;
  a.layers = {
      LayerSpec::conv(32),
      LayerSpec::max_pool(),
      LayerSpec::conv(64),
      LayerSpec::max_pool(),
      LayerSpec::mbconv(40, 2, 2, true),
      LayerSpec::mbconv(112, 2, 2, true),
      LayerSpec::mbconv(1280, 2, 1, false),
      LayerSpec::global_avg_pool(),
      LayerSpec::dense(256),
      LayerSpec::dropout(0.2),
      LayerSpec::dense(classes, Activation::None),
      LayerSpec::softmax(),
  };
  return a;
}

ArchitectureSpec skin_topology(std::size_t classes) {
  ArchitectureSpec a;
  a.name = "skin";
  a.num_classes = classes;
  a.layers = {
      LayerSpec::conv(32),
      LayerSpec::max_pool(),
      LayerSpec::conv(64),
      LayerSpec::conv(128),
      LayerSpec::max_pool(),
      LayerSpec::mbconv(40, 2, 1, false),
      LayerSpec::mbconv(72, 2, 1, false),
      LayerSpec::mbconv(120, 2, 1, false),
      LayerSpec::global_avg_pool(),
      LayerSpec::dropout(0.5),
      LayerSpec::dense(512),
      LayerSpec::dense(512),
      LayerSpec::dense(classes, Activation::None),
      LayerSpec::softmax(),
  };
  return a;
}

} // namespace

ModelPreset build_preset(PresetName name, std::optional<std::size_t> num_classes) {
  const std::size_t classes = num_classes.value_or(2);
  if (classes < 2) throw ArgumentError("num_classes override must be >= 2");
  ModelPreset p{name, name == PresetName::SkinCancer ? skin_topology(classes)
                                                     : chest_topology(to_string(name), classes)};
  validate_architecture(p.arch);
  return p;
}

ArchitectureSpec with_input_size(ArchitectureSpec arch, std::size_t size) {
  arch.input.height = size;
  arch.input.width = size;
  return arch;
}

template <typename T>
BasicTensor<T> predict(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                       const BasicTensor<T>& batch) {
  if (batch.rank() != 4 || batch.extent(1) != arch.input.height ||
      batch.extent(2) != arch.input.width || batch.extent(3) != arch.input.channels) {
    throw ShapeError("predict", "batch " + shape_string(batch.shape()) +
                                    " does not match model input " +
                                    shape_string(arch.input_shape(0)));
  }
  BasicTensor<T> out = forward(arch, params, batch, Mode::Infer).output;
  if (arch.layers.empty() || arch.layers.back().kind != LayerKind::Softmax) out = softmax(out);
  return out;
}

template BasicTensor<float> predict(const ArchitectureSpec&, const BasicParameterSet<float>&,
                                    const BasicTensor<float>&);
template BasicTensor<double> predict(const ArchitectureSpec&, const BasicParameterSet<double>&,
                                     const BasicTensor<double>&);

} // namespace effnet
