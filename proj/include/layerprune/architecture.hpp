#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "layerprune/model_graph.hpp"

namespace layerprune {

struct LayerToken {
  enum class Kind { conv, removed, pool };
  Kind kind = Kind::conv;
  int width = 0;
};

struct BlockSpec {
  std::vector<int> widths;  // output channels of each conv in the block
  int stride = 1;
  bool removed = false;
};

// Structured-text architecture description. VGG models list their layers
// in report form ([64, 64, 'M', ...], 0 = removed); ResNets list blocks
// explicitly, or by stages in the compact form.
struct ArchitectureDescriptor {
  Family family = Family::vgg;
  BlockType block = BlockType::basic;
  bool batch_norm = true;
  std::array<int, 3> input{3, 32, 32};
  int num_classes = 10;
  std::vector<LayerToken> layers;  // vgg
  int stem_width = 16;             // resnet
  std::vector<BlockSpec> blocks;   // resnet

  bool operator==(const ArchitectureDescriptor& o) const;
};

ArchitectureDescriptor parse_descriptor(const nlohmann::json& j);
nlohmann::json to_json(const ArchitectureDescriptor& d);
ArchitectureDescriptor load_descriptor(const std::filesystem::path& path);
void save_descriptor(const ArchitectureDescriptor& d, const std::filesystem::path& path);

ArchitectureDescriptor describe(const ModelGraph& graph);

// Named presets: vgg19_bn, vgg19, resnet56, toy_vgg, toy_vgg_nobn,
// toy_resnet, toy_bottleneck.
ArchitectureDescriptor preset_descriptor(std::string_view name, int num_classes = 10);
std::vector<std::string> preset_names();

// Fresh model with He-normal conv weights and unit BN scales.
ModelGraph instantiate(const ArchitectureDescriptor& d, std::uint64_t seed);

using TensorMap = std::map<std::string, Tensor>;

// Checkpoint: the graph's named tensors (parameters plus BN buffers) in a
// little-endian float64 container.
void write_checkpoint(const ModelGraph& graph, const std::filesystem::path& path);
TensorMap read_checkpoint(const std::filesystem::path& path);
std::string encode_tensors(const ModelGraph& graph);
TensorMap decode_tensors(std::string_view bytes);

// Validates the stored tensors against the descriptor.
ModelGraph build_graph(const TensorMap& checkpoint, const ArchitectureDescriptor& descriptor);

// Self-contained round trip (descriptor + tensors in one blob).
std::string serialize(const ModelGraph& graph);
ModelGraph deserialize(std::string_view bytes);

void save_model(const ModelGraph& graph, const std::filesystem::path& checkpoint,
                const std::filesystem::path& descriptor);
ModelGraph load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& descriptor);
// "<stem>.ckpt" -> "<stem>.arch.json"
std::filesystem::path descriptor_path_for(const std::filesystem::path& checkpoint);

nlohmann::json to_json(const PrunePlan& plan);
PrunePlan plan_from_json(const nlohmann::json& j);

}  // namespace layerprune
