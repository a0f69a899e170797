#include "ade/token_store.hpp"

#include "ade/errors.hpp"

#include <spdlog/spdlog.h>

#include <cstring>
#include <fstream>

namespace ade {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'E', 'T', 'O', 'K', '1', '\0'};
constexpr std::size_t kHashLength = 64;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("token store " + path.string() + " is truncated");
  return v;
}

}  // namespace

TokenStore::TokenStore(std::string config_hash, int num_tokens, int dim)
    : hash_(std::move(config_hash)), num_tokens_(num_tokens), dim_(dim) {
  if (hash_.size() != kHashLength) throw DataError("token store hash must be 64 hex characters");
}

std::vector<std::string> TokenStore::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

const MatrixF& TokenStore::get(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw DataError("token store has no entry for '" + id + "'");
  return it->second;
}

void TokenStore::put(const std::string& id, MatrixF tokens) {
  if (tokens.rows() != num_tokens_ || tokens.cols() != dim_) {
    throw ShapeError("token matrix for '" + id + "' is " + std::to_string(tokens.rows()) + "x" +
                     std::to_string(tokens.cols()) + ", store expects " + std::to_string(num_tokens_) + "x" +
                     std::to_string(dim_));
  }
  entries_[id] = std::move(tokens);
}

void TokenStore::save(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write token store " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(hash_.data(), static_cast<std::streamsize>(kHashLength));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(num_tokens_));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    write_pod<std::uint64_t>(out, entries_.size());
    std::uint64_t offset = 0;
    for (const auto& [id, _] : entries_) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
      out.write(id.data(), static_cast<std::streamsize>(id.size()));
      write_pod<std::uint64_t>(out, offset);
      offset += static_cast<std::uint64_t>(num_tokens_);
    }
    for (const auto& [_, m] : entries_) {
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing token store " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TokenStore TokenStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open token store " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not an ADETOK1 token store");
  }
  std::string hash(kHashLength, '\0');
  in.read(hash.data(), static_cast<std::streamsize>(kHashLength));
  const auto t = read_pod<std::uint32_t>(in, path);
  const auto d = read_pod<std::uint32_t>(in, path);
  const auto count = read_pod<std::uint64_t>(in, path);
  if (t < 2 || d < 1) throw DataError(path.string() + ": invalid token shape");
  TokenStore store(hash, static_cast<int>(t), static_cast<int>(d));

  std::vector<std::pair<std::string, std::uint64_t>> index;
  index.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(in, path);
    if (len > 4096) throw DataError(path.string() + ": corrupt index");
    std::string id(len, '\0');
    in.read(id.data(), len);
    index.emplace_back(std::move(id), read_pod<std::uint64_t>(in, path));
  }
  const auto data_start = in.tellg();
  for (const auto& [id, offset] : index) {
    MatrixF m(t, d);
    in.seekg(data_start + static_cast<std::streamoff>(offset * d * sizeof(float)));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw DataError("token store " + path.string() + " is truncated");
    store.entries_.emplace(id, std::move(m));
  }
  return store;
}

CacheResult cache_tokens(const std::vector<ImageRecord>& records, const std::filesystem::path& image_root,
                         const Backbone& backbone, const std::filesystem::path& path) {
  const auto& cfg = backbone.config();
  CacheResult result;
  if (std::filesystem::exists(path)) {
    result.store = TokenStore::load(path);
    if (result.store.config_hash() != backbone.config_hash()) {
      throw DataError("token store " + path.string() + " was built with config hash " +
                      result.store.config_hash() + " but the current backbone config hashes to " +
                      backbone.config_hash() + "; delete the store or restore the config");
    }
  } else {
    result.store = TokenStore(backbone.config_hash(), cfg.num_tokens(), cfg.embed_dim);
  }
  for (const auto& r : records) {
    if (result.store.contains(r.id)) continue;
    const auto file = r.path.is_absolute() ? r.path : image_root / r.path;
    result.store.put(r.id, backbone.encode_file(file));
    ++result.encoded;
  }
  if (result.encoded > 0 || !std::filesystem::exists(path)) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    result.store.save(path);
  }
  spdlog::info("token store {}: {} entries, {} encoded", path.string(), result.store.size(), result.encoded);
  return result;
}

}  // namespace ade
