#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "radgen/corpus.hpp"
#include "radgen/model.hpp"
#include "radgen/tensor.hpp"

namespace radgen {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// "RGCK", u16 version, u32 count, then per tensor: u16 name length, name,
// u8 rank, u32 dims, float32 LE values. Values narrow to float32 on write.
std::string encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(std::string_view bytes);

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Everything needed to rebuild a model for inference.
struct Checkpoint {
  ReportModel model;
  Vocab vocab;
  std::vector<std::string> tags;
};

// Writes the tensor file at `path` and its metadata (config, vocab, tag
// list) at `path` + ".json". Both writes are atomic.
void save_checkpoint(const std::filesystem::path& path, const ReportModel& model,
                     const Vocab& vocab, const std::vector<std::string>& tags);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors into `params` by name; shapes must agree and every
// parameter must be present.
void assign_parameters(ParameterSet& params, const std::vector<NamedTensor>& tensors);

std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path);

}  // namespace radgen
