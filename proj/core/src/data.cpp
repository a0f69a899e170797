#include "ade/data.hpp"

#include "ade/errors.hpp"
#include "ade/rng.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <map>
#include <unordered_set>

namespace ade {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw DataError("unknown split '" + text + "'");
}

std::string to_string(World world) { return world == World::closed ? "closed" : "open"; }

World parse_world(const std::string& text) {
  if (text == "closed") return World::closed;
  if (text == "open") return World::open;
  throw UsageError("unknown world '" + text + "' (expected closed or open)");
}

const std::set<Pair>& SplitSpec::unseen_for(Split phase) const {
  return phase == Split::test ? unseen_test : unseen_val;
}

std::vector<Pair> SplitSpec::candidates(World world, Split phase, const ConceptVocabulary& vocab) const {
  if (world == World::open) return vocab.all_pairs();
  std::set<Pair> out = seen;
  if (phase != Split::test) out.insert(unseen_val.begin(), unseen_val.end());
  if (phase != Split::val) out.insert(unseen_test.begin(), unseen_test.end());
  return {out.begin(), out.end()};
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == s) out.push_back(i);
  }
  return out;
}

std::filesystem::path Dataset::image_path(const ImageRecord& r) const {
  return r.path.is_absolute() ? r.path : root / r.path;
}

const ImageRecord* Dataset::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::filesystem::path split_sidecar_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".split.json");
  return p;
}

namespace {

std::set<Pair> read_pairs(const json& j, const char* key, const ConceptVocabulary& vocab) {
  std::set<Pair> out;
  if (!j.contains(key)) return out;
  for (const auto& item : j.at(key)) {
    if (!item.is_array() || item.size() != 2) throw DataError(std::string("split file: bad pair in ") + key);
    out.insert({vocab.attribute_index(item[0].get<std::string>()),
                vocab.object_index(item[1].get<std::string>())});
  }
  return out;
}

json write_pairs(const std::set<Pair>& pairs, const ConceptVocabulary& vocab) {
  json arr = json::array();
  for (const auto& p : pairs) arr.push_back({vocab.attributes[p.attr], vocab.objects[p.obj]});
  return arr;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto sidecar = split_sidecar_path(manifest);
  std::ifstream sin(sidecar);
  if (!sin) throw DataError("cannot open split file " + sidecar.string());

  Dataset ds;
  ds.root = manifest.parent_path();
  json split_json;
  try {
    split_json = json::parse(sin);
    ds.vocab.attributes = split_json.at("attributes").get<std::vector<std::string>>();
    ds.vocab.objects = split_json.at("objects").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("split file " + sidecar.string() + ": " + e.what());
  }
  ds.vocab.validate();
  ds.split.unseen_val = read_pairs(split_json, "unseen_val", ds.vocab);
  ds.split.unseen_test = read_pairs(split_json, "unseen_test", ds.vocab);

  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ImageRecord r;
    try {
      const json j = json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      r.attribute = ds.vocab.attribute_index(j.at("attribute").get<std::string>());
      r.object = ds.vocab.object_index(j.at("object").get<std::string>());
      r.split = parse_split(j.at("split").get<std::string>());
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(r.id).second) throw DataError("duplicate image id '" + r.id + "'");
    ds.records.push_back(std::move(r));
  }

  for (const auto& r : ds.records) {
    if (r.split == Split::train) ds.split.seen.insert(r.pair());
  }
  for (const auto& r : ds.records) {
    const Pair p = r.pair();
    if (r.split == Split::train) {
      if (ds.split.unseen_val.contains(p) || ds.split.unseen_test.contains(p)) {
        throw DataError("train image '" + r.id + "' belongs to unseen pair " + ds.vocab.pair_name(p));
      }
    } else if (!ds.split.seen.contains(p) && !ds.split.unseen_for(r.split).contains(p)) {
      throw DataError(to_string(r.split) + " image '" + r.id + "' has pair " + ds.vocab.pair_name(p) +
                      " that is neither seen nor listed as unseen for its split");
    }
  }
  if (ds.split.unseen_val.empty() && ds.split.unseen_test.empty()) {
    spdlog::warn("{}: no unseen pairs; closed world reduces to seen-only classification",
                 manifest.string());
  }
  spdlog::debug("{}: {} attributes, {} objects, {} seen / {} val-unseen / {} test-unseen pairs, {} images",
                manifest.string(), ds.vocab.num_attributes(), ds.vocab.num_objects(), ds.split.seen.size(),
                ds.split.unseen_val.size(), ds.split.unseen_test.size(), ds.records.size());
  return ds;
}

void save_manifest(const Dataset& ds, const std::filesystem::path& manifest) {
  {
    std::ofstream out(manifest, std::ios::binary);
    if (!out) throw DataError("cannot write " + manifest.string());
    for (const auto& r : ds.records) {
      json j;
      j["id"] = r.id;
      j["path"] = r.path.generic_string();
      j["attribute"] = ds.vocab.attributes.at(r.attribute);
      j["object"] = ds.vocab.objects.at(r.object);
      j["split"] = to_string(r.split);
      out << j.dump() << '\n';
    }
  }
  json s;
  s["attributes"] = ds.vocab.attributes;
  s["objects"] = ds.vocab.objects;
  s["unseen_val"] = write_pairs(ds.split.unseen_val, ds.vocab);
  s["unseen_test"] = write_pairs(ds.split.unseen_test, ds.vocab);
  std::ofstream out(split_sidecar_path(manifest), std::ios::binary);
  if (!out) throw DataError("cannot write split file");
  out << s.dump(2) << '\n';
}

// ---- sampler ----------------------------------------------------------------

PairSampler::PairSampler(const Dataset& dataset, std::uint64_t seed)
    : dataset_(&dataset), seed_(seed),
      by_attr_(dataset.vocab.attributes.size()), by_obj_(dataset.vocab.objects.size()) {
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    if (r.split != Split::train) continue;
    by_attr_[r.attribute].push_back(i);
    by_obj_[r.object].push_back(i);
  }
}

std::vector<std::size_t> PairSampler::attr_pool(std::size_t target, bool preferred) const {
  const auto& t = dataset_->records.at(target);
  std::vector<std::size_t> out;
  for (auto i : by_attr_[t.attribute]) {
    if (i == target) continue;
    if (preferred && dataset_->records[i].object == t.object) continue;
    out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> PairSampler::obj_pool(std::size_t target, bool preferred) const {
  const auto& t = dataset_->records.at(target);
  std::vector<std::size_t> out;
  for (auto i : by_obj_[t.object]) {
    if (i == target) continue;
    if (preferred && dataset_->records[i].attribute == t.attribute) continue;
    out.push_back(i);
  }
  return out;
}

PairSample PairSampler::sample(std::size_t target, std::uint64_t epoch) const {
  Rng rng = keyed_rng(seed_, {rng_stream::kSampler, epoch, target});
  auto pick = [&rng, target](const std::vector<std::size_t>& preferred,
                             const std::vector<std::size_t>& fallback) {
    const auto& pool = !preferred.empty() ? preferred : fallback;
    if (pool.empty()) return target;
    std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
    return pool[dist(rng)];
  };
  PairSample s;
  s.target = target;
  s.attr_partner = pick(attr_pool(target, true), attr_pool(target, false));
  s.obj_partner = pick(obj_pool(target, true), obj_pool(target, false));
  return s;
}

}  // namespace ade
