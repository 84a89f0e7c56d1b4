#include "raner/util.hpp"

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace raner {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::string file_fingerprint(const std::string& path) {
  std::string bytes = read_text_file(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

static_assert(std::endian::native == std::endian::little,
              "persisted float blobs assume a little-endian host");

void write_f32(std::vector<float>& out, const std::vector<double>& v) {
  out.reserve(out.size() + v.size());
  for (double x : v) out.push_back(static_cast<float>(x));
}

std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out;
  write_f32(out, v);
  return out;
}

std::vector<double> to_f64(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

void save_f32_file(const std::string& path, const std::vector<float>& v) {
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  check_data(f.good(), "write failed: " + path);
}

std::vector<float> load_f32_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  check_data(f.good(), "cannot open: " + path);
  auto bytes = static_cast<size_t>(f.tellg());
  check_data(bytes % sizeof(float) == 0, "truncated float blob: " + path);
  std::vector<float> v(bytes / sizeof(float));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  check_data(f.good(), "read failed: " + path);
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot open for writing: " + path);
  f << content;
  check_data(f.good(), "write failed: " + path);
}

int worker_threads() {
  if (const char* env = std::getenv("RANER_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace raner
