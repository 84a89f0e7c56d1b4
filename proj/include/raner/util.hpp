#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace raner {

// Error taxonomy shared with the CLI exit codes: config (2), data (3),
// numeric (4).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw config_error(msg);
}
inline void check_data(bool ok, const std::string& msg) {
  if (!ok) throw data_error(msg);
}

// FNV-1a 64-bit over raw bytes. Used for KB/checkpoint content fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

// Content hash of a file (FNV-1a over its bytes), hex encoded.
std::string file_fingerprint(const std::string& path);

// Little-endian float32 blob IO. All persisted vectors and checkpoints use
// this layout.
void write_f32(std::vector<float>& out, const std::vector<double>& v);
std::vector<float> to_f32(const std::vector<double>& v);
std::vector<double> to_f64(const std::vector<float>& v);
void save_f32_file(const std::string& path, const std::vector<float>& v);
std::vector<float> load_f32_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Deterministic RNG plumbing: one master seed, named sub-streams so a
// parallel schedule cannot change the draws.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
  uint64_t mixed = stream ^ static_cast<uint64_t>(0x9e3779b97f4a7c15ULL);
  std::seed_seq seq{seed, mixed};
  return std::mt19937_64(seq);
}

// Worker-thread count: RANER_THREADS env var, else hardware concurrency.
int worker_threads();

}  // namespace raner
