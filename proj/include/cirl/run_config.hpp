#pragma once

// Flat key = value run configuration. Values come from defaults, then a
// config file, then command-line flags; later sources win.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cirl/model.hpp"
#include "cirl/synthcorpus.hpp"
#include "cirl/trainer.hpp"

namespace cirl {

struct RunConfig {
  CorpusConfig corpus;
  double sigma = 0.1;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> k_list{1, 5, 10, 50};
  std::vector<std::size_t> subset_k_list{1, 2, 3};
  std::uint64_t seed = 42;
  std::string out = "out";

  // Throws InvalidConfig for an unknown key, ParseError for a malformed value.
  void set(std::string_view key, std::string_view value);
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, std::string_view origin = "<text>");

  // Every key with its current value.
  std::string to_text() const;
  // Only the keys that shape a trained model: model.*, render.sigma, seed.
  std::string model_text() const;

  RenderConfig render() const;
  void validate() const;

  static std::vector<std::string> keys();
};

}  // namespace cirl
