// ade: command-line driver for dataset generation, token caching, training,
// evaluation, retrieval and plotting.

#include "ade/backbone.hpp"
#include "ade/data.hpp"
#include "ade/errors.hpp"
#include "ade/evaluation.hpp"
#include "ade/inference.hpp"
#include "ade/retrieval.hpp"
#include "ade/run_config.hpp"
#include "ade/token_store.hpp"
#include "ade/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <map>

namespace {

using ade::RunConfig;
using json = nlohmann::ordered_json;

// Flags map onto config keys; a flag given on the command line overrides the
// config file.
struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void apply(RunConfig& cfg) const {
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ade::UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) cfg.set(k, v);
  }
};

void flag(CLI::App* app, Overrides& ov, const std::string& name, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(name, [&ov, key](const std::string& v) { ov.flags[key] = v; }, help);
}

void common(CLI::App* app, Overrides& ov) {
  app->add_option("--config", ov.config_file, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--set", ov.sets, "Override any config key, e.g. --set train.epochs=5");
  flag(app, ov, "--seed", "run.seed", "Root seed");
  flag(app, ov, "--out", "run.output_dir", "Output directory");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ade::DataError("cannot write " + path.string());
  out << text;
}

ade::TokenStore cached_tokens(const RunConfig& cfg, const ade::Dataset& ds) {
  const ade::Backbone backbone(cfg.backbone());
  return ade::cache_tokens(ds.records, ds.root, backbone, cfg.token_store()).store;
}

// Loads <run>/resolved_config.ini under the flag overrides.
RunConfig run_config_from(const std::filesystem::path& run_dir, const Overrides& ov) {
  RunConfig cfg;
  const auto resolved = run_dir / "resolved_config.ini";
  if (!std::filesystem::exists(resolved)) throw ade::DataError("no resolved_config.ini in " + run_dir.string());
  cfg.load_file(resolved);
  cfg.set("run.output_dir", "");
  ov.apply(cfg);
  return cfg;
}

ade::TrainState load_model(const RunConfig& cfg, const ade::Dataset& ds, const std::filesystem::path& ckpt) {
  const auto model = cfg.model();
  const auto train = cfg.train();
  return ade::load_checkpoint(ckpt, ade::initial_state(model, train, ds.vocab)).state;
}

int cmd_synth(const Overrides& ov) {
  RunConfig cfg;
  ov.apply(cfg);
  const auto out = cfg.output_dir("synthetic");
  const auto ds = ade::generate_synthetic(cfg.synthetic(), out);
  cfg.write_resolved(out);
  std::cout << "wrote " << ds.records.size() << " images (" << ds.split.seen.size() << " seen, "
            << ds.split.unseen_val.size() << " val-unseen, " << ds.split.unseen_test.size()
            << " test-unseen pairs) to " << (out / "manifest.jsonl").string() << '\n';
  return 0;
}

int cmd_cache(const Overrides& ov) {
  RunConfig cfg;
  ov.apply(cfg);
  const auto ds = ade::load_manifest(cfg.manifest());
  const ade::Backbone backbone(cfg.backbone());
  const auto result = ade::cache_tokens(ds.records, ds.root, backbone, cfg.token_store());
  std::cout << "token store " << cfg.token_store().string() << ": " << result.store.size() << " entries, "
            << result.encoded << " encoded\n";
  return 0;
}

int cmd_train(const Overrides& ov) {
  RunConfig cfg;
  ov.apply(cfg);
  const auto out = cfg.output_dir("train");
  const auto ds = ade::load_manifest(cfg.manifest());
  const auto store = cached_tokens(cfg, ds);
  cfg.write_resolved(out);
  const auto result = ade::fit(cfg.model(), cfg.train(), ds, store, out);
  std::cout << "best epoch " << result.best_epoch << " (val " << result.best_selection << "), outputs in "
            << out.string() << '\n';
  return 0;
}

int cmd_eval(const Overrides& ov, const std::filesystem::path& run_dir, std::string checkpoint,
             const std::string& split_name) {
  RunConfig cfg = run_config_from(run_dir, ov);
  const auto ds = ade::load_manifest(cfg.manifest());
  const auto store = cached_tokens(cfg, ds);
  if (checkpoint.empty()) checkpoint = (run_dir / "best.ckpt").string();
  const auto model = cfg.model();
  const auto state = load_model(cfg, ds, checkpoint);
  const auto world = cfg.world();
  const auto split = ade::parse_split(split_name);
  if (split == ade::Split::train) throw ade::UsageError("evaluate on val or test");

  json selection;
  double beta = 0.0;
  const auto& beta_text = cfg.get("eval.beta");
  if (beta_text == "auto") {
    const auto val = ade::score_split(model, state.params, ds, store, ade::Split::val, world);
    const auto sel = ade::select_beta(val);
    beta = sel.beta;
    selection["beta"] = sel.beta;
    for (const auto& [b, auc] : sel.auc_by_beta) selection["grid"].push_back(json{{"beta", b}, {"auc", auc}});
  } else {
    try {
      beta = std::stod(beta_text);
    } catch (const std::exception&) {
      throw ade::UsageError("--beta expects auto or a number, got '" + beta_text + "'");
    }
    if (!(beta >= 0.0)) throw ade::UsageError("--beta must be nonnegative");
  }

  const auto table = ade::score_split(model, state.params, ds, store, split, world);
  const auto report = table.evaluate(beta);
  const auto out = cfg.get("run.output_dir").empty()
                       ? run_dir / ("eval_" + split_name + "_" + ade::to_string(world))
                       : std::filesystem::path(cfg.get("run.output_dir"));
  std::filesystem::create_directories(out);
  cfg.write_resolved(out);
  write_text(out / "metrics.json", ade::metrics_to_json(report) + "\n");
  ade::write_curve_csv(report.curve, out / "curve.csv");
  write_text(out / "curve.svg", ade::curves_to_svg({{split_name + " " + ade::to_string(world), report.curve}}));
  ade::write_score_dump(table, beta, ds.vocab, out / "scores.jsonl");
  if (!selection.empty()) write_text(out / "beta_selection.json", selection.dump(2) + "\n");

  std::cout << "world " << ade::to_string(world) << ", " << table.candidates.size() << " candidates, beta "
            << beta << '\n'
            << "AUC " << report.auc << "  HM " << report.best_hm << "  seen " << report.best_seen << "  unseen "
            << report.best_unseen << "  attr " << report.attr_acc << "  obj " << report.obj_acc << '\n'
            << "outputs in " << out.string() << '\n';
  return 0;
}

ade::Pair parse_pair(const ade::ConceptVocabulary& vocab, const std::string& text) {
  const auto sp = text.find(' ');
  if (sp == std::string::npos) throw ade::UsageError("--query expects \"<attribute> <object>\"");
  return {vocab.attribute_index(text.substr(0, sp)), vocab.object_index(text.substr(sp + 1))};
}

int cmd_retrieve(const Overrides& ov, const std::filesystem::path& run_dir, std::string checkpoint,
                 const std::string& mode, const std::string& query, const std::string& image_id,
                 const std::string& concept_name, std::size_t k, const std::string& sheet) {
  if (mode != "t2i" && mode != "i2t" && mode != "concept") {
    throw ade::UsageError("--mode must be t2i, i2t or concept");
  }
  if (concept_name != "attribute" && concept_name != "object") throw ade::UsageError("--concept must be attribute or object");
  RunConfig cfg = run_config_from(run_dir, ov);
  const auto ds = ade::load_manifest(cfg.manifest());
  const auto store = cached_tokens(cfg, ds);
  if (checkpoint.empty()) checkpoint = (run_dir / "best.ckpt").string();
  const auto model = cfg.model();
  const auto state = load_model(cfg, ds, checkpoint);

  json report;
  report["mode"] = mode;
  report["k"] = k;
  std::vector<std::filesystem::path> sheet_images;
  auto image_hits = [&](const std::vector<ade::ImageHit>& hits) {
    json arr = json::array();
    for (const auto& h : hits) {
      arr.push_back(json{{"id", h.id}, {"pair", ds.vocab.pair_name(h.label)}, {"similarity", h.similarity}});
      sheet_images.push_back(ds.image_path(*ds.find(h.id)));
    }
    return arr;
  };
  auto query_image = [&]() -> const ade::ImageRecord& {
    if (image_id.empty()) throw ade::UsageError("--image is required for this mode");
    const auto* rec = ds.find(image_id);
    if (rec == nullptr) throw ade::DataError("unknown image id '" + image_id + "'");
    return *rec;
  };

  if (mode == "t2i") {
    if (query.empty()) throw ade::UsageError("--query is required for t2i");
    const auto pair = parse_pair(ds.vocab, query);
    std::vector<std::size_t> all(ds.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto index = ade::build_index(model, state.params, ds, store, all);
    report["query"] = ds.vocab.pair_name(pair);
    report["hits"] = image_hits(ade::text_to_image(index, state.params, pair, k));
  } else {
    const auto& rec = query_image();
    const auto emb = ade::embed_image(model, state.params, store.get(rec.id).cast<double>());
    report["query"] = {{"id", rec.id}, {"pair", ds.vocab.pair_name(rec.pair())}};
    sheet_images.push_back(ds.image_path(rec));
    if (mode == "i2t") {
      json arr = json::array();
      for (const auto& h : ade::image_to_text(emb, state.params, ds.vocab.all_pairs(), k)) {
        arr.push_back(json{{"pair", ds.vocab.pair_name(h.pair)}, {"similarity", h.similarity}});
      }
      report["hits"] = std::move(arr);
    } else {
      const auto kind = concept_name == "attribute" ? ade::ConceptKind::attribute : ade::ConceptKind::object;
      const auto index = ade::build_index(model, state.params, ds, store, ds.indices(ade::Split::train));
      const auto hits = ade::concept_retrieve(index, emb, kind, k);
      report["concept"] = concept_name;
      report["hits"] = image_hits(hits);
      report["precision"] = ade::precision_at_k(hits, rec.pair(), kind);
    }
  }
  std::cout << report.dump(2) << '\n';
  if (!sheet.empty()) {
    if (sheet_images.empty()) throw ade::UsageError("no images to put on a contact sheet");
    ade::write_contact_sheet(sheet, sheet_images);
  }
  return 0;
}

int cmd_plot(const std::vector<std::string>& metrics, std::vector<std::string> labels, const std::string& out) {
  if (!labels.empty() && labels.size() != metrics.size()) throw ade::UsageError("give one --label per metrics file");
  std::vector<ade::LabeledCurve> curves;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    std::ifstream in(metrics[i]);
    if (!in) throw ade::DataError("cannot open " + metrics[i]);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ade::DataError(metrics[i] + " is empty");
    auto report = ade::metrics_from_json(text);
    if (report.curve.points.empty()) throw ade::DataError(metrics[i] + " has no curve points");
    curves.push_back({labels.empty() ? std::filesystem::path(metrics[i]).parent_path().filename().string() : labels[i],
                      std::move(report.curve)});
  }
  write_text(out, ade::curves_to_svg(curves));
  std::cout << "wrote " << out << " with " << curves.size() << " curve(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-disentangled compositional zero-shot learning toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  Overrides ov;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic colored-shapes dataset");
  common(synth, ov);
  flag(synth, ov, "--colors", "synth.colors", "Comma-separated color names");
  flag(synth, ov, "--shapes", "synth.shapes", "Comma-separated shape names");
  flag(synth, ov, "--images-per-pair", "synth.images_per_pair", "Train images per seen pair");
  flag(synth, ov, "--eval-images-per-pair", "synth.eval_images_per_pair", "Val/test images per pair");
  flag(synth, ov, "--unseen-frac", "synth.unseen_fraction", "Fraction of pairs held out as unseen");
  flag(synth, ov, "--image-size", "synth.image_size", "Rendered image size in pixels");

  auto* cache = app.add_subcommand("cache", "Encode a manifest into a token store");
  common(cache, ov);
  flag(cache, ov, "--manifest", "data.manifest", "Dataset manifest (JSON lines)");
  flag(cache, ov, "--tokens", "data.tokens", "Token store path");
  flag(cache, ov, "--backbone", "backbone.mode", "toy or external");
  flag(cache, ov, "--weights", "backbone.weights", "External backbone weight file");

  auto* train = app.add_subcommand("train", "Cache tokens and train a model");
  common(train, ov);
  flag(train, ov, "--manifest", "data.manifest", "Dataset manifest (JSON lines)");
  flag(train, ov, "--tokens", "data.tokens", "Token store path");
  flag(train, ov, "--epochs", "train.epochs", "Training epochs");
  flag(train, ov, "--lr", "train.learning_rate", "Learning rate");
  flag(train, ov, "--batch-size", "train.batch_size", "Batch size");
  flag(train, ov, "--attention", "model.attention", "cross, self or none");
  flag(train, ov, "--reg-weight", "model.reg_weight", "Regularizer weight");
  flag(train, ov, "--solver", "model.solver", "exact or sinkhorn");

  std::string run_dir;
  std::string checkpoint;
  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  common(eval, ov);
  eval->add_option("--run", run_dir, "Training output directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <run>/best.ckpt)");
  eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));
  flag(eval, ov, "--world", "eval.world", "closed or open");
  flag(eval, ov, "--beta", "eval.beta", "auto or a value");

  std::string mode;
  std::string query;
  std::string image_id;
  std::string concept_name = "attribute";
  std::size_t k = 5;
  std::string sheet;
  auto* retrieve = app.add_subcommand("retrieve", "Text-to-image, image-to-text and concept retrieval");
  common(retrieve, ov);
  retrieve->add_option("--run", run_dir, "Training output directory")->required();
  retrieve->add_option("--checkpoint", checkpoint, "Checkpoint (default <run>/best.ckpt)");
  retrieve->add_option("--mode", mode, "t2i, i2t or concept")->required();
  retrieve->add_option("--query", query, "Composition \"<attribute> <object>\" for t2i");
  retrieve->add_option("--image", image_id, "Query image id for i2t and concept modes");
  retrieve->add_option("--concept", concept_name, "attribute or object (concept mode)");
  retrieve->add_option("--k", k, "Results to return")->check(CLI::PositiveNumber);
  retrieve->add_option("--sheet", sheet, "Write a contact-sheet PNG");

  std::vector<std::string> metrics;
  std::vector<std::string> labels;
  std::string plot_out = "curves.svg";
  auto* plot = app.add_subcommand("plot", "Plot unseen-seen curves from metrics.json files");
  plot->add_option("metrics", metrics, "metrics.json files")->required()->check(CLI::ExistingFile);
  plot->add_option("--label", labels, "Legend label per file");
  plot->add_option("-o,--out", plot_out, "Output SVG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  // Logs go to stderr so that JSON on stdout stays machine-readable.
  spdlog::set_default_logger(spdlog::stderr_color_mt("ade"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) return cmd_synth(ov);
    if (*cache) return cmd_cache(ov);
    if (*train) return cmd_train(ov);
    if (*eval) return cmd_eval(ov, run_dir, checkpoint, split);
    if (*retrieve) return cmd_retrieve(ov, run_dir, checkpoint, mode, query, image_id, concept_name, k, sheet);
    if (*plot) return cmd_plot(metrics, labels, plot_out);
  } catch (const ade::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ade::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const ade::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
