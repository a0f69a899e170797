#include "ade/model.hpp"

#include "ade/errors.hpp"

#include <array>
#include <optional>

namespace ade {

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::cross: return "cross";
    case AttentionMode::self: return "self";
    case AttentionMode::none: return "none";
  }
  return "cross";
}

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "cross") return AttentionMode::cross;
  if (text == "self") return AttentionMode::self;
  if (text == "none") return AttentionMode::none;
  throw UsageError("unknown attention mode '" + text + "' (expected cross, self or none)");
}

void ModelConfig::validate() const {
  attention().validate();
  if (hidden_dim <= 0 || word_dim <= 0) throw UsageError("model: embedder widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("model: dropout must be in [0, 1)");
  if (!(reg_weight >= 0.0)) throw UsageError("model: regularizer weight must be nonnegative");
  probe.validate();
}

ModelParams ModelParams::random(const ModelConfig& config, const ConceptVocabulary& vocab, Rng& rng) {
  config.validate();
  const auto acfg = config.attention();
  ModelParams p;
  p.attn_attr = AttentionParams::random(acfg, rng);
  p.attn_obj = AttentionParams::random(acfg, rng);
  p.attn_comp = AttentionParams::random(acfg, rng);
  p.heads.attr = Embedder::random(config.token_dim, config.hidden_dim, config.word_dim, rng);
  p.heads.obj = Embedder::random(config.token_dim, config.hidden_dim, config.word_dim, rng);
  p.heads.comp = Embedder::random(config.token_dim, config.hidden_dim, config.word_dim, rng);
  for (auto* e : {&p.heads.attr, &p.heads.obj, &p.heads.comp}) e->dropout = config.dropout;
  p.heads.composer = Composer::random(config.word_dim, rng);
  p.heads.table = config.word_vectors.empty() ? EmbeddingTable::random(vocab, config.word_dim, rng)
                                              : load_word_vectors(config.word_vectors, vocab, config.word_dim, rng);
  p.heads.table.trainable = config.train_prototypes;
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  auto zero_attn = [](const AttentionParams& a) {
    AttentionParams z = a;
    z.visit([](std::string_view, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
  };
  return {zero_attn(other.attn_attr), zero_attn(other.attn_obj), zero_attn(other.attn_comp),
          ConceptHeads::zeros_like(other.heads)};
}

namespace {

// A projection of one image under one disentangler, with its gradient sink.
struct Proj {
  Projection value;
  ProjectionGrad grad;
};

// One attend() call and its upstream gradient.
struct Pass {
  const AttentionParams* params = nullptr;
  AttentionParams* grads = nullptr;
  Proj* query = nullptr;
  Proj* key_value = nullptr;
  AttentionResult result;
  AttentionGrad grad;
};

Proj make_proj(const AttentionParams& params, const Matrix& tokens) {
  Proj p{project(params, tokens), {}};
  p.grad = ProjectionGrad::zeros_like(p.value);
  return p;
}

Pass run(const AttentionConfig& acfg, const AttentionParams& params, AttentionParams* grads, Proj& q, Proj& kv) {
  Pass pass;
  pass.params = &params;
  pass.grads = grads;
  pass.query = &q;
  pass.key_value = &kv;
  pass.result = attend(acfg, params, q.value, kv.value);
  return pass;
}

void set_class_grad(Pass& pass, const Vector& d) {
  if (pass.grad.d_output.size() == 0) {
    pass.grad.d_output = Matrix::Zero(pass.result.output.rows(), pass.result.output.cols());
  }
  pass.grad.d_output.row(0) += d.transpose();
}

void check_tokens(const Matrix& z, const Matrix& z_attr, const Matrix& z_obj, int dim) {
  for (const Matrix* m : {&z, &z_attr, &z_obj}) {
    if (m->cols() != dim || m->rows() < 2) {
      throw ShapeError("model: token sequences must be (T >= 2, " + std::to_string(dim) + ")");
    }
  }
  if (z_attr.rows() != z.rows() || z_obj.rows() != z.rows()) throw ShapeError("model: token counts differ");
}

}  // namespace

TripleLoss triple_loss(const ModelConfig& config, const ModelParams& params, const Matrix& z,
                       const Matrix& z_attr, const Matrix& z_obj, const TripleLabels& labels,
                       const Matrix& comp_prototypes, ModelParams* grads, Matrix* d_comp_prototypes, double scale,
                       Rng* dropout_rng) {
  check_tokens(z, z_attr, z_obj, config.token_dim);
  const bool backward = grads != nullptr;
  const auto acfg = config.attention();
  const CeLabels ce_labels{labels.attr, labels.obj, labels.comp};
  TripleLoss out;

  if (config.mode == AttentionMode::none) {
    const ConceptFeatures f{z.row(0).transpose(), z_attr.row(0).transpose(), z.row(0).transpose(),
                            z_obj.row(0).transpose(), z.row(0).transpose()};
    ConceptFeatures d_features;
    out.ce = total_ce_loss(f, ce_labels, params.heads, comp_prototypes, config.probe,
                           backward ? &grads->heads : nullptr, backward ? &d_features : nullptr,
                           d_comp_prototypes, scale, dropout_rng);
    out.total = out.ce.total();
    return out;
  }

  AttentionParams* ga = backward ? &grads->attn_attr : nullptr;
  AttentionParams* go = backward ? &grads->attn_obj : nullptr;
  AttentionParams* gc = backward ? &grads->attn_comp : nullptr;
  const bool cross = config.mode == AttentionMode::cross;
  const bool regularize = cross && config.reg_weight != 0.0;

  Proj a_z = make_proj(params.attn_attr, z);
  Proj a_za = make_proj(params.attn_attr, z_attr);
  Proj o_z = make_proj(params.attn_obj, z);
  Proj o_zo = make_proj(params.attn_obj, z_obj);
  Proj c_z = make_proj(params.attn_comp, z);
  std::optional<Proj> a_zo;
  std::optional<Proj> o_za;
  if (regularize) {
    a_zo = make_proj(params.attn_attr, z_obj);
    o_za = make_proj(params.attn_obj, z_attr);
  }

  // Feature passes: v_a, v_a', v_o, v_o', v_c.
  std::vector<Pass> passes;
  passes.reserve(9);
  if (cross) {
    passes.push_back(run(acfg, params.attn_attr, ga, a_z, a_za));
    passes.push_back(run(acfg, params.attn_attr, ga, a_za, a_z));
    passes.push_back(run(acfg, params.attn_obj, go, o_z, o_zo));
    passes.push_back(run(acfg, params.attn_obj, go, o_zo, o_z));
  } else {
    passes.push_back(run(acfg, params.attn_attr, ga, a_z, a_z));
    passes.push_back(run(acfg, params.attn_attr, ga, a_za, a_za));
    passes.push_back(run(acfg, params.attn_obj, go, o_z, o_z));
    passes.push_back(run(acfg, params.attn_obj, go, o_zo, o_zo));
  }
  passes.push_back(run(acfg, params.attn_comp, gc, c_z, c_z));
  if (regularize) {
    // Wrong-concept pairings: attribute attention on the object-sharing pair
    // and object attention on the attribute-sharing pair.
    passes.push_back(run(acfg, params.attn_attr, ga, a_z, *a_zo));
    passes.push_back(run(acfg, params.attn_attr, ga, *a_zo, a_z));
    passes.push_back(run(acfg, params.attn_obj, go, o_z, *o_za));
    passes.push_back(run(acfg, params.attn_obj, go, *o_za, o_z));
  }

  auto row0 = [&passes](int i) -> Vector { return passes[i].result.output.row(0).transpose(); };
  const ConceptFeatures f{row0(0), row0(1), row0(2), row0(3), row0(4)};
  ConceptFeatures d_features;
  out.ce = total_ce_loss(f, ce_labels, params.heads, comp_prototypes, config.probe,
                         backward ? &grads->heads : nullptr, backward ? &d_features : nullptr, d_comp_prototypes,
                         scale, dropout_rng);

  if (regularize) {
    struct Term {
      int first;
      double sign;
      double* value;
    };
    const std::array<Term, 4> terms{{{0, -1.0, &out.reg.attr_attr},
                                     {2, -1.0, &out.reg.obj_obj},
                                     {5, 1.0, &out.reg.attr_obj},
                                     {7, 1.0, &out.reg.obj_attr}}};
    for (const auto& t : terms) {
      Pass& b1 = passes[t.first];
      Pass& b2 = passes[t.first + 1];
      const AttentionEmd emd = attention_emd(b1.result, b2.result, config.emd);
      *t.value = emd.value;
      if (backward) {
        attention_emd_backward(emd, scale * config.reg_weight * t.sign, b1.result, b2.result, config.emd, b1.grad,
                               b2.grad);
      }
    }
    out.reg_loss = regularization_loss(out.reg);
  }
  out.total = out.ce.total() + config.reg_weight * out.reg_loss;

  if (backward) {
    set_class_grad(passes[0], d_features.attr);
    set_class_grad(passes[1], d_features.attr_prime);
    set_class_grad(passes[2], d_features.obj);
    set_class_grad(passes[3], d_features.obj_prime);
    set_class_grad(passes[4], d_features.comp);
    for (auto& p : passes) {
      attend_backward(acfg, *p.params, p.query->value, p.key_value->value, p.result, p.grad, *p.grads,
                      p.query->grad, p.key_value->grad);
    }
    project_backward(a_z.value, a_z.grad, *ga);
    project_backward(a_za.value, a_za.grad, *ga);
    project_backward(o_z.value, o_z.grad, *go);
    project_backward(o_zo.value, o_zo.grad, *go);
    project_backward(c_z.value, c_z.grad, *gc);
    if (regularize) {
      project_backward(a_zo->value, a_zo->grad, *ga);
      project_backward(o_za->value, o_za->grad, *go);
    }
  }
  return out;
}

ImageFeatures image_features(const ModelConfig& config, const ModelParams& params, const Matrix& z) {
  if (z.cols() != config.token_dim || z.rows() < 2) throw ShapeError("model: bad token sequence shape");
  if (config.mode == AttentionMode::none) {
    const Vector cls = z.row(0).transpose();
    return {cls, cls, cls};
  }
  const auto acfg = config.attention();
  auto cls_of = [&](const AttentionParams& p) -> Vector {
    return self_attend(z, p, acfg).output.row(0).transpose();
  };
  return {cls_of(params.attn_attr), cls_of(params.attn_obj), cls_of(params.attn_comp)};
}

}  // namespace ade
