#pragma once

#include <optional>
#include <string>

#include "effnet/architecture.hpp"
#include "effnet/network.hpp"

namespace effnet {

enum class PresetName { BrainTumor, BreastCancer, ChestCancer, SkinCancer };

const char* to_string(PresetName name);

// Accepts "brain", "breast", "chest", "skin" (or the enum spelling,
// e.g. "ChestCancer", case-insensitive). Throws ArgumentError otherwise.
PresetName preset_from_string(const std::string& text);

struct ModelPreset {
  PresetName name;
  ArchitectureSpec arch;
};

// Classifier presets for 224x224x3 inputs.
//
// Chest (also used for brain and breast):
//   conv32 -> pool -> conv64 -> pool                          56x56x64
//   mbconv40 s2 x2 -> mbconv112 s2 x2 -> mbconv1280 s2 x1     7x7x1280
//   gap -> dense256 relu -> dropout 0.2 -> dense C -> softmax
// Skin:
//   conv32 -> pool -> conv64 -> conv128 -> pool              56x56x128
//   mbconv40 s2 -> mbconv72 s2 -> mbconv120 s2                7x7x120
//   gap -> dropout 0.5 -> dense512 relu x2 -> dense C -> softmax
ModelPreset build_preset(PresetName name, std::optional<std::size_t> num_classes = std::nullopt);

// Same topology with a different square input resolution.
ArchitectureSpec with_input_size(ArchitectureSpec arch, std::size_t size);

// Class probabilities in Infer mode. The batch must be [N, h, w, c] with the
// architecture's declared input extents.
template <typename T>
BasicTensor<T> predict(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                       const BasicTensor<T>& batch);

} // namespace effnet
