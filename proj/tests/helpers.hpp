#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "crispr/dataset.hpp"
#include "crispr/model.hpp"
#include "crispr/oracles.hpp"
#include "crispr/tokenizer.hpp"

namespace testutil {

inline crispr::ModelConfig tiny_config(int d_model = 16, int d_ff = 32, int heads = 2) {
  crispr::ModelConfig c;
  c.vocab_size = crispr::Tokenizer::standard().vocab_size();
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.n_heads = heads;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.max_seq_len = 160;
  c.dtype = crispr::DType::f64;
  return c;
}

inline crispr::Model tiny_model(std::uint64_t seed = 1, double scale = 0.3) {
  return crispr::make_random_model(tiny_config(), seed, scale);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("crispr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline crispr::Instance make_instance(std::string id, std::string context, std::vector<std::string> choices,
                                      int gold, crispr::ContextType type = crispr::ContextType::ambig,
                                      std::string question = "who was it?") {
  crispr::Instance in;
  in.id = std::move(id);
  in.context = std::move(context);
  in.question = std::move(question);
  in.choices = std::move(choices);
  in.gold_index = gold;
  in.context_type = type;
  return in;
}

// Small mixed dataset over lowercase text.
inline crispr::Dataset toy_dataset(int n = 6) {
  crispr::Dataset d;
  d.name = "toy";
  const char* contexts[] = {"a man and a woman sat down.", "the cat slept on the mat.",
                            "two friends went to the shop.", "an old dog ran in the park."};
  for (int i = 0; i < n; ++i) {
    d.instances.push_back(make_instance(
        "t" + std::to_string(i), contexts[i % 4], {"the man", "the woman", "unknown"}, i % 3,
        i % 2 ? crispr::ContextType::disambig : crispr::ContextType::ambig));
  }
  return d;
}

}  // namespace testutil
