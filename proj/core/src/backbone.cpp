#include "ade/backbone.hpp"

#include "ade/errors.hpp"
#include "ade/hash.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ade {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'E', 'V', 'I', 'T', '1', '\0'};

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, sizeof v);
    return v;
  }

  template <typename Derived>
  void fill(Eigen::PlainObjectBase<Derived>& m) {
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    read(buf.data(), buf.size() * sizeof(float));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = buf[static_cast<std::size_t>(i)];
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw DataError("weight file " + path_.string() + " is truncated");
  }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

template <typename Derived>
void write_floats(std::ostream& out, const Eigen::PlainObjectBase<Derived>& m) {
  std::vector<float> buf(m.data(), m.data() + m.size());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void write_u32(std::ostream& out, int v) {
  const auto u = static_cast<std::uint32_t>(v);
  out.write(reinterpret_cast<const char*>(&u), sizeof u);
}

void allocate(VitWeights& w, int depth) {
  const int d = w.embed_dim;
  const int m = w.mlp_dim;
  const int p = w.patch_size;
  const int t = 1 + (w.image_size / p) * (w.image_size / p);
  w.patch_w.resize(3 * p * p, d);
  w.patch_b.resize(d);
  w.cls.resize(d);
  w.pos.resize(t, d);
  w.blocks.assign(static_cast<std::size_t>(depth), {});
  for (auto& b : w.blocks) {
    b.ln1_g.resize(d);
    b.ln1_b.resize(d);
    b.attn = AttentionParams::zeros({w.num_heads, d});
    b.ln2_g.resize(d);
    b.ln2_b.resize(d);
    b.fc1_w.resize(d, m);
    b.fc1_b.resize(m);
    b.fc2_w.resize(m, d);
    b.fc2_b.resize(d);
  }
  w.norm_g.resize(d);
  w.norm_b.resize(d);
}

Matrix layer_norm(const Matrix& x, const Vector& g, const Vector& b) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    out.row(r) = ((x.row(r).array() - mu) * inv).matrix().cwiseProduct(g.transpose()) + b.transpose();
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

void BackboneConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || depth < 0 || num_heads <= 0 || mlp_dim <= 0) {
    throw UsageError("backbone: sizes must be positive");
  }
  if (image_size % patch_size != 0) throw UsageError("backbone: patch size must divide image size");
  if (embed_dim % num_heads != 0) throw UsageError("backbone: heads must divide embed dim");
  for (double s : std) {
    if (!(s > 0.0)) throw UsageError("backbone: normalization std must be positive");
  }
}

std::string BackboneConfig::canonical_text() const {
  std::ostringstream s;
  s.precision(17);
  s << "mode=" << (mode == BackboneMode::toy ? "toy" : "external") << '\n'
    << "seed=" << (mode == BackboneMode::toy ? seed : 0) << '\n'
    << "image_size=" << image_size << '\n'
    << "patch_size=" << patch_size << '\n'
    << "embed_dim=" << embed_dim << '\n'
    << "depth=" << depth << '\n'
    << "num_heads=" << num_heads << '\n'
    << "mlp_dim=" << mlp_dim << '\n'
    << "mean=" << mean[0] << ',' << mean[1] << ',' << mean[2] << '\n'
    << "std=" << std[0] << ',' << std[1] << ',' << std[2] << '\n';
  return s.str();
}

VitWeights VitWeights::random(const BackboneConfig& c, Rng& rng) {
  c.validate();
  VitWeights w;
  w.image_size = c.image_size;
  w.patch_size = c.patch_size;
  w.embed_dim = c.embed_dim;
  w.num_heads = c.num_heads;
  w.mlp_dim = c.mlp_dim;
  allocate(w, c.depth);
  auto gauss = [&rng](auto& m, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  };
  gauss(w.patch_w, 1.0 / std::sqrt(static_cast<double>(w.patch_w.rows())));
  w.patch_b.setZero();
  gauss(w.cls, 0.02);
  gauss(w.pos, 0.02);
  for (auto& b : w.blocks) {
    b.ln1_g.setOnes();
    b.ln1_b.setZero();
    b.attn = AttentionParams::random({c.num_heads, c.embed_dim}, rng);
    b.ln2_g.setOnes();
    b.ln2_b.setZero();
    gauss(b.fc1_w, 1.0 / std::sqrt(static_cast<double>(c.embed_dim)));
    b.fc1_b.setZero();
    gauss(b.fc2_w, 1.0 / std::sqrt(static_cast<double>(c.mlp_dim)));
    b.fc2_b.setZero();
  }
  w.norm_g.setOnes();
  w.norm_b.setZero();
  return w;
}

VitWeights VitWeights::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("backbone weight file not found: " + path.string());
  Reader r(in, path);
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + " is not an ADEVIT1 weight file");
  VitWeights w;
  w.image_size = static_cast<int>(r.u32());
  w.patch_size = static_cast<int>(r.u32());
  w.embed_dim = static_cast<int>(r.u32());
  const int depth = static_cast<int>(r.u32());
  w.num_heads = static_cast<int>(r.u32());
  w.mlp_dim = static_cast<int>(r.u32());
  if (w.image_size <= 0 || w.patch_size <= 0 || w.image_size % w.patch_size != 0 || w.embed_dim <= 0 ||
      w.num_heads <= 0 || w.embed_dim % w.num_heads != 0 || w.mlp_dim <= 0 || depth < 0 || depth > 64) {
    throw DataError(path.string() + ": invalid header");
  }
  allocate(w, depth);
  const int d = w.embed_dim;
  r.fill(w.patch_w);
  r.fill(w.patch_b);
  r.fill(w.cls);
  r.fill(w.pos);
  for (auto& b : w.blocks) {
    r.fill(b.ln1_g);
    r.fill(b.ln1_b);
    Matrix qkv(d, 3 * d);
    Vector qkv_b(3 * d);
    r.fill(qkv);
    r.fill(qkv_b);
    b.attn.wq = qkv.leftCols(d);
    b.attn.wk = qkv.middleCols(d, d);
    b.attn.wv = qkv.rightCols(d);
    b.attn.bq = qkv_b.head(d);
    b.attn.bk = qkv_b.segment(d, d);
    b.attn.bv = qkv_b.tail(d);
    r.fill(b.attn.wo);
    r.fill(b.attn.bo);
    r.fill(b.ln2_g);
    r.fill(b.ln2_b);
    r.fill(b.fc1_w);
    r.fill(b.fc1_b);
    r.fill(b.fc2_w);
    r.fill(b.fc2_b);
  }
  r.fill(w.norm_g);
  r.fill(w.norm_b);
  return w;
}

void VitWeights::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  for (int v : {image_size, patch_size, embed_dim, static_cast<int>(blocks.size()), num_heads, mlp_dim}) {
    write_u32(out, v);
  }
  const int d = embed_dim;
  write_floats(out, patch_w);
  write_floats(out, patch_b);
  write_floats(out, cls);
  write_floats(out, pos);
  for (const auto& b : blocks) {
    write_floats(out, b.ln1_g);
    write_floats(out, b.ln1_b);
    Matrix qkv(d, 3 * d);
    qkv << b.attn.wq, b.attn.wk, b.attn.wv;
    Vector qkv_b(3 * d);
    qkv_b << b.attn.bq, b.attn.bk, b.attn.bv;
    write_floats(out, qkv);
    write_floats(out, qkv_b);
    write_floats(out, b.attn.wo);
    write_floats(out, b.attn.bo);
    write_floats(out, b.ln2_g);
    write_floats(out, b.ln2_b);
    write_floats(out, b.fc1_w);
    write_floats(out, b.fc1_b);
    write_floats(out, b.fc2_w);
    write_floats(out, b.fc2_b);
  }
  write_floats(out, norm_g);
  write_floats(out, norm_b);
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  std::string text = config_.canonical_text();
  if (config_.mode == BackboneMode::external) {
    weights_ = VitWeights::load(config_.weights);
    const auto& w = weights_;
    if (w.image_size != config_.image_size || w.patch_size != config_.patch_size ||
        w.embed_dim != config_.embed_dim || static_cast<int>(w.blocks.size()) != config_.depth ||
        w.num_heads != config_.num_heads || w.mlp_dim != config_.mlp_dim) {
      throw ShapeError("backbone weights " + config_.weights.string() + " (image " + std::to_string(w.image_size) +
                       ", patch " + std::to_string(w.patch_size) + ", dim " + std::to_string(w.embed_dim) +
                       ", depth " + std::to_string(w.blocks.size()) + ") do not match the configured architecture");
    }
    text += "weights=" + sha256_file_hex(config_.weights) + '\n';
  } else {
    Rng rng = keyed_rng(config_.seed, {rng_stream::kBackbone});
    weights_ = VitWeights::random(config_, rng);
  }
  hash_ = sha256_hex(text);
}

MatrixF Backbone::encode(const RgbImage& image) const {
  if (image.width <= 0 || image.height <= 0) throw DataError("backbone: empty image");
  return encode(preprocess(image, config_.image_size, config_.mean, config_.std));
}

MatrixF Backbone::encode(const PlanarImage& image) const {
  const int s = config_.image_size;
  const int p = config_.patch_size;
  if (image.size != s) throw ShapeError("backbone: image must be preprocessed to " + std::to_string(s));
  const int grid = s / p;
  const int np = grid * grid;
  Matrix patches(np, 3 * p * p);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int col = 0;
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) patches(row, col++) = image.at(c, gy * p + y, gx * p + x);
        }
      }
    }
  }
  const auto& w = weights_;
  Matrix x(np + 1, config_.embed_dim);
  x.row(0) = w.cls.transpose();
  x.bottomRows(np) = (patches * w.patch_w).rowwise() + w.patch_b.transpose();
  x += w.pos;

  const AttentionConfig acfg{config_.num_heads, config_.embed_dim};
  for (const auto& b : w.blocks) {
    x += self_attend(layer_norm(x, b.ln1_g, b.ln1_b), b.attn, acfg).output;
    Matrix h = (layer_norm(x, b.ln2_g, b.ln2_b) * b.fc1_w).rowwise() + b.fc1_b.transpose();
    h = h.unaryExpr(&gelu);
    x += (h * b.fc2_w).rowwise() + b.fc2_b.transpose();
  }
  x = layer_norm(x, w.norm_g, w.norm_b);
  if (!x.allFinite()) throw NumericError("backbone produced non-finite tokens");
  return x.cast<float>();
}

MatrixF Backbone::encode_file(const std::filesystem::path& path) const { return encode(read_png(path)); }

}  // namespace ade
