#pragma once

#include "ade/backbone.hpp"
#include "ade/data.hpp"
#include "ade/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ade {

// id -> (T, D) token matrix, tagged with the hash of the backbone config that
// produced it.
//
// File layout, little-endian:
//   "ADETOK1\0"
//   64 bytes  lower-case hex config hash
//   u32 T, u32 D, u64 count
//   count x { u32 id_length, id bytes, u64 row offset }   sorted by id
//   count * T * D f32 values, row-major, in index order
class TokenStore {
 public:
  TokenStore() = default;
  TokenStore(std::string config_hash, int num_tokens, int dim);

  static TokenStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::string& config_hash() const { return hash_; }
  int num_tokens() const { return num_tokens_; }
  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& id) const { return entries_.contains(id); }
  std::vector<std::string> ids() const;

  // Throws DataError for unknown ids.
  const MatrixF& get(const std::string& id) const;
  // Throws ShapeError if the matrix is not (T, D).
  void put(const std::string& id, MatrixF tokens);

 private:
  std::string hash_;
  int num_tokens_ = 0;
  int dim_ = 0;
  std::map<std::string, MatrixF> entries_;
};

struct CacheResult {
  TokenStore store;
  std::size_t encoded = 0;  // images run through the backbone on this call
};

// Encodes every record missing from the store at `path` and rewrites it if
// anything changed. An existing store built under a different config hash is
// refused with DataError.
CacheResult cache_tokens(const std::vector<ImageRecord>& records, const std::filesystem::path& image_root,
                         const Backbone& backbone, const std::filesystem::path& path);

}  // namespace ade
