#include "ade/errors.hpp"
#include "ade/trainer.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace ade {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'E', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& out, std::span<const double> v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

class In {
 public:
  In(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open checkpoint " + path.string());
  }

  template <typename T>
  T get() {
    T v{};
    raw(&v, sizeof v);
    return v;
  }

  std::string string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) throw DataError("checkpoint " + path_.string() + " is corrupt");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  std::vector<double> doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (1ull << 32)) throw DataError("checkpoint " + path_.string() + " is corrupt");
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }

  void raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw DataError("checkpoint " + path_.string() + " is truncated");
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_hash, const std::string& rng_state,
                     TrainState& state) {
  if (config_hash.size() != 64) throw DataError("checkpoint: config hash must be 64 hex characters");
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(config_hash.data(), 64);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(state.epoch));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(state.step));
    put_string(out, rng_state);
    std::vector<std::pair<std::string, std::span<double>>> tensors;
    state.params.visit([&](const std::string& name, std::span<double> s) { tensors.emplace_back(name, s); });
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, s] : tensors) {
      put_string(out, name);
      put_doubles(out, s);
    }
    const auto& opt = state.optimizer;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(opt.steps()));
    if (opt.m.size() != tensors.size()) throw ShapeError("checkpoint: optimizer state does not match parameters");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      put_doubles(out, opt.m[k]);
      put_doubles(out, opt.v[k]);
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, TrainState templ) {
  In in(path);
  char magic[8];
  in.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + " is not an ADECKPT1 checkpoint");
  Checkpoint ck;
  ck.config_hash.resize(64);
  in.raw(ck.config_hash.data(), 64);
  ck.state = std::move(templ);
  ck.state.epoch = static_cast<int>(in.get<std::uint64_t>());
  ck.state.step = static_cast<std::int64_t>(in.get<std::uint64_t>());
  ck.rng_state = in.string();

  const auto count = in.get<std::uint64_t>();
  std::map<std::string, std::vector<double>> saved;
  std::vector<std::string> order;
  for (std::uint64_t k = 0; k < count; ++k) {
    auto name = in.string();
    order.push_back(name);
    saved.emplace(std::move(name), in.doubles());
  }
  std::vector<std::string> expected;
  ck.state.params.visit([&](const std::string& name, std::span<double> s) {
    auto it = saved.find(name);
    if (it == saved.end()) throw DataError("checkpoint " + path.string() + " lacks tensor " + name);
    if (it->second.size() != s.size()) throw DataError("checkpoint tensor " + name + " has the wrong size");
    std::copy(it->second.begin(), it->second.end(), s.begin());
    expected.push_back(name);
  });
  if (expected != order) throw DataError("checkpoint " + path.string() + " was written for a different model");

  auto& opt = ck.state.optimizer;
  opt.restore_steps(static_cast<std::int64_t>(in.get<std::uint64_t>()));
  opt.names = order;
  opt.m.assign(count, {});
  opt.v.assign(count, {});
  for (std::uint64_t k = 0; k < count; ++k) {
    opt.m[k] = in.doubles();
    opt.v[k] = in.doubles();
    if (opt.m[k].size() != saved[order[k]].size() || opt.v[k].size() != opt.m[k].size()) {
      throw DataError("checkpoint optimizer state has the wrong size");
    }
  }
  return ck;
}

}  // namespace ade
