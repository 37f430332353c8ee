#pragma once

// Binary tensor container used for checkpoints and embedding dumps.
//
//   "CIRL" | u32 version | u32 tensor count
//   per tensor: u16 name length, name bytes, u8 rank, u64 dims[rank], f32 data
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cirl/matrix.hpp"

namespace cirl {

class Model;
struct RunConfig;

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

std::string encode_tensors(const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> decode_tensors(const std::string& bytes);

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path);

// Sidecar holding the model and render settings as key = value lines.
std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

// Rounds the model to fp32 first, so the in-memory model encodes exactly as a reload will.
void save_checkpoint(Model& model, const RunConfig& config, const std::filesystem::path& path);

// Reads the sidecar into `config` (model and render keys) and returns the restored model.
Model load_checkpoint(const std::filesystem::path& path, RunConfig& config);

// Copies tensors into an existing model; the name set and shapes must match exactly.
void load_parameters(Model& model, const std::vector<TensorRecord>& tensors);

void write_embeddings(const std::filesystem::path& path, const Matrix& embeddings,
                      const std::vector<std::size_t>& ids);
Matrix read_embeddings(const std::filesystem::path& path, std::vector<std::size_t>& ids);

}  // namespace cirl
