#pragma once

#include "ade/attention.hpp"
#include "ade/image.hpp"
#include "ade/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ade {

enum class BackboneMode { toy, external };

struct BackboneConfig {
  BackboneMode mode = BackboneMode::toy;
  std::filesystem::path weights;  // external mode only
  std::uint64_t seed = 0;         // toy mode only
  int image_size = 32;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 2;
  int num_heads = 4;
  int mlp_dim = 128;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  int num_tokens() const { return 1 + num_patches(); }

  // Throws UsageError on non-positive sizes, a patch size that does not divide
  // the image size, or heads that do not divide the embedding width.
  void validate() const;
  // Stable key=value rendering of every field that affects the tokens.
  std::string canonical_text() const;
};

// Vision-transformer weights, row-vector convention (y = x * W + b).
//
// Weight file layout, little-endian:
//   "ADEVIT1\0"
//   u32 image_size, patch_size, embed_dim, depth, num_heads, mlp_dim
//   f32 tensors, row-major, in this order:
//     patch_w (3*p*p, D)   patch pixels flattened channel-major (c, y, x)
//     patch_b (D), cls (D), pos (T, D)
//     per block: ln1_g (D), ln1_b (D), qkv_w (D, 3D), qkv_b (3D),
//                proj_w (D, D), proj_b (D), ln2_g (D), ln2_b (D),
//                fc1_w (D, M), fc1_b (M), fc2_w (M, D), fc2_b (D)
//     norm_g (D), norm_b (D)
struct VitBlock {
  Vector ln1_g, ln1_b;
  AttentionParams attn;
  Vector ln2_g, ln2_b;
  Matrix fc1_w;
  Vector fc1_b;
  Matrix fc2_w;
  Vector fc2_b;
};

struct VitWeights {
  int image_size = 0;
  int patch_size = 0;
  int embed_dim = 0;
  int num_heads = 0;
  int mlp_dim = 0;
  Matrix patch_w;
  Vector patch_b;
  Vector cls;
  Matrix pos;
  std::vector<VitBlock> blocks;
  Vector norm_g, norm_b;

  static VitWeights random(const BackboneConfig& config, Rng& rng);
  // Throws DataError if the file is missing or truncated.
  static VitWeights load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Frozen encoder: patch projection, class token, positional embedding,
// pre-norm transformer blocks, final layer norm. Token 0 is the class token.
class Backbone {
 public:
  // External mode loads the weight file and throws ShapeError if its
  // dimensions disagree with the config. Toy mode draws weights from the seed.
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  // SHA-256 over the canonical config text and, in external mode, the weight
  // file's digest.
  const std::string& config_hash() const { return hash_; }

  MatrixF encode(const RgbImage& image) const;
  MatrixF encode(const PlanarImage& image) const;
  MatrixF encode_file(const std::filesystem::path& path) const;

 private:
  BackboneConfig config_;
  VitWeights weights_;
  std::string hash_;
};

}  // namespace ade
