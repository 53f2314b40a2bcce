#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaplab/eval.hpp"
#include "gaplab/gapstats.hpp"
#include "gaplab/parallel.hpp"
#include "gaplab/trainer.hpp"

#ifndef GAPLAB_VERSION
#define GAPLAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gaplab;

namespace {

using Model = ModelParams<float>;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  if (!out) throw RuntimeError("cannot write " + p.string());
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

Direction parse_direction(std::string s) {
  std::erase_if(s, [](char c) { return c == '-' || c == '>' || c == '2' || c == ' '; });
  if (s == "AB") return kAtoB;
  if (s == "BA") return kBtoA;
  throw ConfigError("direction must be A-B or B-A");
}

std::vector<TokenList> as_tokens(std::span<const Sentence> xs, const Vocab& v) {
  std::vector<TokenList> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(decode(x, v));
  return out;
}

DecodeSpec decode_spec(int beam) {
  DecodeSpec d;
  if (beam > 1) {
    d.mode = DecodeSpec::Mode::beam;
    d.beam_size = beam;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Data directories written by gen-data

struct DataDir {
  fs::path root;
  SynthSpec spec;
  SynthWorld world;
  Vocab vocab;
  MonoCorpus mono_a, mono_b;
  ParallelSet test, valid, parallel;
};

DataDir load_data(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("data directory not found: " + root.string());
  DataDir d;
  d.root = root;
  d.spec = synth_spec_from_json(read_json(root / "spec.json"));
  d.world = expand(d.spec);
  d.vocab = read_vocab(root / "vocab.txt");
  d.mono_a = read_corpus(root / "monoA.txt", Lang::A, d.vocab);
  d.mono_b = read_corpus(root / "monoB.txt", Lang::B, d.vocab);
  d.test = read_parallel(root / "test.tsv", kAtoB, d.vocab);
  d.valid = read_parallel(root / "valid.tsv", kAtoB, d.vocab);
  d.parallel = read_parallel(root / "parallel.tsv", kAtoB, d.vocab);
  return d;
}

std::vector<std::string> forms(const SynthWorld& w, Lang l) {
  std::vector<std::string> out;
  for (const auto& word : w.words) out.push_back(word.form[static_cast<std::size_t>(l)]);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configs and manifests

const std::vector<std::string> kVariants{"unmt", "unmt_st", "snmt", "offline_st", "kd"};

struct Experiment {
  fs::path data;
  std::string variant = "unmt_st";
  std::vector<std::uint64_t> seeds{1};
  json train;  // defaults with overrides applied
  std::string teacher = "oracle";
  fs::path out;
  bool st_lambda_given = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

Experiment load_experiment(const fs::path& path) {
  const json j = read_json(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : base / s; };
  for (const auto& [k, v] : j.items())
    if (k != "data" && k != "variant" && k != "seeds" && k != "defaults" && k != "train" && k != "teacher" &&
        k != "out")
      throw ConfigError(path.string() + ": unknown key '" + k + "'");
  Experiment e;
  if (!j.contains("data")) throw ConfigError(path.string() + ": 'data' is required");
  e.data = resolve(j["data"].get<std::string>());
  e.variant = j.value("variant", e.variant);
  if (j.contains("seeds")) e.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  json defaults = json::object();
  if (j.contains("defaults"))
    defaults = j["defaults"].is_string() ? read_json(resolve(j["defaults"].get<std::string>())) : j["defaults"];
  const json overrides = j.value("train", json::object());
  e.train = layer_config(defaults, overrides);
  e.st_lambda_given = e.train.contains("schedules") && e.train["schedules"].contains("st");
  e.teacher = j.value("teacher", e.teacher);
  if (e.teacher != "oracle") e.teacher = resolve(e.teacher).string();
  e.out = j.contains("out") ? resolve(j["out"].get<std::string>()) : base / "runs";
  return e;
}

void check(const Experiment& e) {
  if (std::find(kVariants.begin(), kVariants.end(), e.variant) == kVariants.end())
    throw ConfigError("unknown variant '" + e.variant + "' (unmt, unmt_st, snmt, offline_st, kd)");
  if (e.seeds.empty()) throw ConfigError("seed list is empty");
  if (!fs::is_directory(e.data)) throw ConfigError("data directory not found: " + e.data.string());
  if (e.teacher != "oracle" && !fs::exists(e.teacher)) throw ConfigError("teacher checkpoint not found: " + e.teacher);
}

json resolved(const Experiment& e) {
  return {{"data", fs::absolute(e.data).lexically_normal().string()},
          {"variant", e.variant},
          {"seeds", e.seeds},
          {"train", to_json(train_config_from_json(e.train))},
          {"teacher", e.teacher}};
}

std::string file_hash(const fs::path& p) { return hex64(fnv64(read_file(p))); }

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string spec, out;
  SynthSizes sizes;
};

int cmd_gen_data(const GenArgs& a) {
  const auto spec = synth_spec_from_json(read_json(a.spec));
  validate(spec);
  const auto data = gen_synthetic_pair(spec, a.sizes);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_json(out / "spec.json", to_json(spec));
  write_vocab(out / "vocab.txt", data.vocab);
  write_corpus(out / "monoA.txt", data.mono_a, data.vocab);
  write_corpus(out / "monoB.txt", data.mono_b, data.vocab);
  write_parallel(out / "test.tsv", data.test, data.vocab);
  write_parallel(out / "valid.tsv", data.valid, data.vocab);
  write_parallel(out / "parallel.tsv", data.parallel_train, data.vocab);
  std::printf("wrote %s: %zu+%zu monolingual, %zu test, %zu valid, %zu parallel\n", out.string().c_str(),
              data.mono_a.sentences.size(), data.mono_b.sentences.size(), data.test.size(), data.valid.size(),
              data.parallel_train.size());
  return 0;
}

// ---------------------------------------------------------------------------
// train

std::unique_ptr<Teacher> make_teacher(const std::string& which, const DataDir& d, Model* keep) {
  if (which == "oracle") return std::make_unique<OracleTeacher>(d.world, d.vocab);
  auto ck = load_checkpoint<float>(which);
  if (ck.vocab.hash() != d.vocab.hash()) throw ConfigError("teacher vocabulary differs from the data: " + which);
  *keep = std::move(ck.params);
  return std::make_unique<ModelTeacher<float>>(snapshot(*keep), DecodeSpec{});
}

int cmd_train(Experiment e) {
  check(e);
  if (e.variant == "unmt" && e.st_lambda_given)
    std::fprintf(stderr, "warning: variant unmt ignores the self-training lambda in the config\n");
  const auto base_cfg = train_config_from_json(e.train);
  validate(base_cfg);
  const auto data = load_data(e.data);
  const auto anchors = lexicon_anchors(data.world, data.vocab);
  Model teacher_params;
  std::unique_ptr<Teacher> teacher;
  if (e.variant == "offline_st" || e.variant == "kd") teacher = make_teacher(e.teacher, data, &teacher_params);

  fs::create_directories(e.out);
  const auto cfg_json = resolved(e);
  json manifest{{"config_hash", hex64(fnv64(cfg_json.dump()))},
                {"code_version", std::string("gaplab ") + GAPLAB_VERSION},
                {"variant", e.variant},
                {"config", cfg_json},
                {"runs", json::array()}};
  const auto t0 = std::chrono::steady_clock::now();
  bool failed = false;
  for (auto seed : e.seeds) {
    const fs::path dir = e.out / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    auto c = base_cfg;
    c.seed = seed;
    if (e.variant == "unmt") c.self_training = false;
    json run{{"seed", seed}};
    const auto r0 = std::chrono::steady_clock::now();
    try {
      std::ofstream log(dir / "steps.jsonl");
      auto on_step = [&](const StepLog& s) { log << to_json(s).dump() << '\n'; };
      TrainResult<float> r;
      if (e.variant == "unmt" || e.variant == "unmt_st") {
        r = train_unmt<float>(c, data.vocab, data.mono_a, data.mono_b, &data.valid, anchors, nullptr, on_step);
      } else if (e.variant == "snmt") {
        r = train_supervised<float>(c, data.vocab, data.parallel, &data.valid, on_step);
      } else if (e.variant == "kd") {
        r = kd_distill<float>(*teacher, c, data.vocab, data.mono_a, data.mono_b, &data.valid, anchors, on_step);
      } else {
        auto d = offline_st_distill<float>(*teacher, c, data.vocab, data.mono_a, data.mono_b, &data.valid);
        write_parallel(dir / "distilled.tsv", d.data, data.vocab);
        for (const auto& s : d.student.logs) on_step(s);
        r = std::move(d.student);
      }
      json valid = json::array();
      for (const auto& v : r.valid) valid.push_back(to_json(v));
      write_json(dir / "valid.json", valid);
      save_checkpoint(dir / "model.ck", r.best, data.vocab);
      run["checkpoint"] = fs::relative(dir / "model.ck", e.out).string();
      run["checkpoint_hash"] = file_hash(dir / "model.ck");
      run["log"] = fs::relative(dir / "steps.jsonl", e.out).string();
      run["valid"] = fs::relative(dir / "valid.json", e.out).string();
      run["steps"] = r.steps;
      run["best_step"] = r.best_step;
      run["best_valid"] = r.best_valid;
      run["status"] = r.diverged ? "aborted" : "ok";
      if (r.diverged) {
        run["error"] = r.abort_reason;
        failed = true;
      }
    } catch (const std::exception& ex) {
      run["status"] = "error";
      run["error"] = ex.what();
      failed = true;
    }
    run["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
    std::printf("seed %llu: %s\n", static_cast<unsigned long long>(seed), run["status"].get<std::string>().c_str());
    manifest["runs"].push_back(run);
    manifest["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(e.out / "manifest.json", manifest);
  }
  std::printf("manifest: %s\n", (e.out / "manifest.json").string().c_str());
  return failed ? 2 : 0;
}

// ---------------------------------------------------------------------------
// Manifest access

struct Run {
  std::uint64_t seed = 0;
  fs::path checkpoint;
};

struct Manifest {
  fs::path root;
  json j;
  std::vector<Run> runs;
  std::vector<std::string> errors;
  fs::path data() const { return j.at("config").at("data").get<std::string>(); }
  std::string name() const { return j.value("variant", root.filename().string()); }
};

Manifest load_manifest(const fs::path& path) {
  Manifest m;
  m.root = path.parent_path();
  m.j = read_json(path);
  if (!m.j.contains("runs") || !m.j.contains("config")) throw ConfigError(path.string() + ": not a run manifest");
  for (const auto& r : m.j["runs"]) {
    const auto seed = r.at("seed").get<std::uint64_t>();
    const std::string tag = "seed " + std::to_string(seed);
    if (!r.contains("checkpoint")) {
      m.errors.push_back(tag + ": no checkpoint (" + r.value("error", std::string("run failed")) + ")");
      continue;
    }
    const fs::path ck = m.root / r["checkpoint"].get<std::string>();
    if (!fs::exists(ck)) {
      m.errors.push_back(tag + ": missing checkpoint " + ck.string());
      continue;
    }
    if (file_hash(ck) != r.value("checkpoint_hash", std::string())) {
      m.errors.push_back(tag + ": checkpoint hash mismatch " + ck.string());
      continue;
    }
    m.runs.push_back({seed, ck});
  }
  return m;
}

Model load_model(const Run& r, const Vocab& vocab) {
  auto ck = load_checkpoint<float>(r.checkpoint);
  if (ck.vocab.hash() != vocab.hash()) throw ConfigError("checkpoint vocabulary differs from the data: " +
                                                         r.checkpoint.string());
  return std::move(ck.params);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::vector<std::string> manifests;
  std::string test, out, splits = "full,src_ori,tgt_ori";
  int beam = 5;
  std::size_t resamples = 1000;
  std::uint64_t bootstrap_seed = 1;
};

struct SystemScores {
  std::string name;
  // per direction: seed -> report
  std::array<std::map<std::uint64_t, SplitReport>, 2> reports;
};

int cmd_evaluate(const EvalArgs& a) {
  if (a.manifests.empty() || a.manifests.size() > 2) throw ConfigError("evaluate takes one or two manifests");
  const auto splits = parse_splits(a.splits);
  std::vector<Manifest> ms;
  for (const auto& p : a.manifests) ms.push_back(load_manifest(p));
  const auto data = load_data(ms.front().data());
  const ParallelSet test = a.test.empty() ? data.test : read_parallel(a.test, kAtoB, data.vocab);
  const std::array<ParallelSet, 2> sets{test, reversed(test)};
  const auto spec = decode_spec(a.beam);

  json report{{"splits", a.splits}, {"beam", a.beam}, {"systems", json::array()}, {"errors", json::array()}};
  std::vector<SystemScores> systems;
  for (const auto& m : ms) {
    SystemScores s{m.name(), {}};
    for (const auto& err : m.errors) report["errors"].push_back(m.name() + " " + err);
    json sys{{"name", s.name}, {"config_hash", m.j.value("config_hash", "")}, {"runs", json::array()}};
    for (const auto& run : m.runs) {
      try {
        const auto model = load_model(run, data.vocab);
        json jr{{"seed", run.seed}};
        for (std::size_t d = 0; d < 2; ++d) {
          auto rep = split_eval(model, sets[d], spec);
          jr[to_string(sets[d].direction())] = to_json(rep);
          s.reports[d].emplace(run.seed, std::move(rep));
        }
        sys["runs"].push_back(jr);
      } catch (const std::exception& ex) {
        report["errors"].push_back(s.name + " seed " + std::to_string(run.seed) + ": " + ex.what());
      }
    }
    report["systems"].push_back(sys);
    systems.push_back(std::move(s));
  }

  std::vector<ReportRow> rows;
  for (std::size_t si = 0; si < systems.size(); ++si)
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& reps = systems[si].reports[d];
      ReportRow row;
      row.system = systems[si].name;
      row.direction = to_string(sets[d].direction());
      for (Split sp : {Split::full, Split::src_ori, Split::tgt_ori}) {
        const auto k = static_cast<std::size_t>(sp);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [seed, rep] : reps)
          if (rep.get(sp)) {
            sum += rep.get(sp)->bleu;
            ++n;
          }
        if (n > 0) row.bleu[k] = sum / static_cast<double>(n);
      }
      if (si == 1) {
        // Seeds present in both systems, pooled into one paired comparison.
        const auto& base = systems[0].reports[d];
        json sig = json::object();
        for (Split sp : splits) {
          const auto k = static_cast<std::size_t>(sp);
          std::vector<BleuStats> sa, sb;
          double delta = 0.0;
          std::size_t n = 0;
          for (const auto& [seed, rep] : reps) {
            auto it = base.find(seed);
            if (it == base.end() || !rep.get(sp) || !it->second.get(sp)) continue;
            delta += rep.get(sp)->bleu - it->second.get(sp)->bleu;
            ++n;
            for (std::size_t i = 0; i < sets[d].size(); ++i) {
              const auto& pair = sets[d].pairs[i];
              if (sp != Split::full &&
                  pair.origin != (sp == Split::src_ori ? Origin::source_original : Origin::target_original))
                continue;
              sa.push_back(sentence_stats(rep.hyps[i].ids, pair.ref.ids));
              sb.push_back(sentence_stats(it->second.hyps[i].ids, pair.ref.ids));
            }
          }
          if (n == 0) continue;
          row.delta[k] = delta / static_cast<double>(n);
          const auto r = paired_bootstrap(sa, sb, a.resamples, a.bootstrap_seed);
          row.p_value[k] = r.p_value;
          sig[split_name(sp)] = to_json(r);
        }
        report["significance"][row.direction] = sig;
      }
      rows.push_back(row);
    }
  const auto table = markdown_table(rows, splits);
  std::cout << table;
  if (!a.out.empty()) {
    write_json(fs::path(a.out) / "evaluate.json", report);
    write_file(fs::path(a.out) / "evaluate.md", table);
  }
  for (const auto& e : report["errors"]) std::fprintf(stderr, "error: %s\n", e.get<std::string>().c_str());
  return report["errors"].empty() ? 0 : 2;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string which, manifest, data, out;
  std::uint64_t seed = 0;  // 0: first run in the manifest
  double natural_mix = 0.0;
  std::size_t top_k = 10;
};

std::string entity_table(const std::vector<std::pair<std::string, std::vector<EntityCount>>>& rows) {
  std::ostringstream out;
  out << "| data | top entities |\n|---|---|\n";
  for (const auto& [name, counts] : rows) {
    out << "| " << name << " |";
    for (std::size_t i = 0; i < counts.size(); ++i) out << (i ? ", " : " ") << counts[i].entity << " (" << counts[i].count << ")";
    out << " |\n";
  }
  return out.str();
}

int cmd_analyze(const AnalyzeArgs& a) {
  static const std::vector<std::string> kinds{"style", "content", "entities", "fluency"};
  if (std::find(kinds.begin(), kinds.end(), a.which) == kinds.end())
    throw ConfigError("--which must be style, content, entities or fluency");
  if (a.natural_mix < 0.0 || a.natural_mix >= 1.0) throw ConfigError("--natural-mix must be in [0, 1)");
  std::optional<Manifest> m;
  if (!a.manifest.empty()) m = load_manifest(a.manifest);
  const fs::path data_dir = !a.data.empty() ? fs::path(a.data) : m ? m->data() : fs::path();
  if (data_dir.empty()) throw ConfigError("analyze needs --data or --manifest");
  const auto d = load_data(data_dir);

  std::optional<Model> model;
  if (a.which != "content") {
    if (!m) throw ConfigError("analyze --which " + a.which + " needs a trained run (--manifest)");
    const Run* run = nullptr;
    for (const auto& r : m->runs)
      if (a.seed == 0 || r.seed == a.seed) {
        run = &r;
        break;
      }
    if (!run) throw ConfigError("manifest has no usable checkpoint" + (a.seed ? " for seed " + std::to_string(a.seed) : ""));
    model = load_model(*run, d.vocab);
  }

  json out{{"which", a.which}};
  std::string md;
  char buf[256];
  const auto natural_src = as_tokens(sources(filter_origin(d.test, Origin::source_original)), d.vocab);
  const auto translated_src = as_tokens(sources(filter_origin(d.test, Origin::target_original)), d.vocab);

  if (a.which == "style") {
    const auto bt = as_tokens(translate(*model, d.mono_b.sentences, kBtoA, DecodeSpec{}), d.vocab);
    const auto n_nat = static_cast<std::size_t>(a.natural_mix * static_cast<double>(bt.size()));
    std::vector<TokenList> lm_text(bt.begin(), bt.end() - static_cast<std::ptrdiff_t>(n_nat));
    const auto nat = as_tokens(d.mono_a.sentences, d.vocab);
    lm_text.insert(lm_text.end(), nat.begin(), nat.begin() + static_cast<std::ptrdiff_t>(std::min(n_nat, nat.size())));
    const auto lm = train_ngram_lm(lm_text, 4, {}, forms(d.world, Lang::A));
    const auto g = style_gap_ppl(lm, natural_src, translated_src);
    out["result"] = to_json(g);
    out["natural_mix"] = a.natural_mix;
    out["translated_lower"] = g.ppl_translated < g.ppl_natural;
    std::snprintf(buf, sizeof buf, "| ppl natural | ppl translated | translated < natural |\n|---:|---:|---|\n| %.2f | %.2f | %s |\n",
                  g.ppl_natural, g.ppl_translated, g.ppl_translated < g.ppl_natural ? "yes" : "no");
    md = buf;
  } else if (a.which == "content") {
    // Natural A text against oracle translations of natural B text, each
    // compared with an independent sample of the same kind.
    const auto n = d.mono_a.sentences.size();
    const auto nat1 = as_tokens(d.mono_a.sentences, d.vocab);
    const auto nat2 = sample_natural(d.world, Lang::A, n, derive_seed(d.spec.seed, 901)).sentences;
    auto to_a = [&](const std::vector<TokenList>& b) {
      std::vector<TokenList> r;
      for (const auto& s : b) r.push_back(oracle_translate(s, kBtoA, d.world));
      return r;
    };
    const auto tr1 = to_a(as_tokens(d.mono_b.sentences, d.vocab));
    const auto tr2 = to_a(sample_natural(d.world, Lang::B, n, derive_seed(d.spec.seed, 902)).sentences);
    const double g[2][2] = {{content_similarity(nat1, nat2), content_similarity(nat1, tr2)},
                            {content_similarity(tr1, nat2), content_similarity(tr1, tr2)}};
    out["grid"] = {{"natural", {{"natural", g[0][0]}, {"translated", g[0][1]}}},
                   {"translated", {{"natural", g[1][0]}, {"translated", g[1][1]}}}};
    const double margin = std::min(g[0][0], g[1][1]) - std::max(g[0][1], g[1][0]);
    out["diagonal_margin"] = margin;
    std::snprintf(buf, sizeof buf,
                  "| | natural | translated |\n|---|---:|---:|\n| natural | %.3f | %.3f |\n| translated | %.3f | %.3f |\n",
                  g[0][0], g[0][1], g[1][0], g[1][1]);
    md = buf;
  } else if (a.which == "entities") {
    const auto inv_a = d.world.entities(Lang::A);
    const auto bt = as_tokens(translate(*model, d.mono_b.sentences, kBtoA, DecodeSpec{}), d.vocab);
    const std::vector<std::pair<std::string, std::vector<EntityCount>>> rows{
        {"back-translated training data", entity_frequency(bt, inv_a, a.top_k)},
        {"test, natural input", entity_frequency(natural_src, inv_a, a.top_k)},
        {"test, translated input", entity_frequency(translated_src, inv_a, a.top_k)}};
    json tables = json::object();
    for (const auto& [name, counts] : rows) tables[name] = to_json(counts);
    out["frequency"] = tables;
    md = entity_table(rows);
    md += "\n| direction | natural-input entity accuracy |\n|---|---:|\n";
    const std::array<ParallelSet, 2> sets{d.test, reversed(d.test)};
    for (const auto& set : sets) {
      const auto nat = filter_origin(set, Origin::source_original);
      const auto hyps = as_tokens(translate(*model, sources(nat), set.direction(), DecodeSpec{}), d.vocab);
      const auto acc =
          entity_translation_accuracy(hyps, as_tokens(references(nat), d.vocab), d.world.entities(set.direction().tgt));
      out["accuracy"][to_string(set.direction())] = to_json(acc);
      if (acc.accuracy)
        std::snprintf(buf, sizeof buf, "| %s | %.3f |\n", to_string(set.direction()).c_str(), *acc.accuracy);
      else
        std::snprintf(buf, sizeof buf, "| %s | - |\n", to_string(set.direction()).c_str());
      md += buf;
    }
  } else {
    md = "| direction | fluency PPL |\n|---|---:|\n";
    const std::array<ParallelSet, 2> sets{d.test, reversed(d.test)};
    for (const auto& set : sets) {
      const auto tgt = set.direction().tgt;
      const auto& mono = tgt == Lang::A ? d.mono_a : d.mono_b;
      const auto lm = train_ngram_lm(as_tokens(mono.sentences, d.vocab), 4, {}, forms(d.world, tgt));
      const auto hyps = as_tokens(translate(*model, sources(set), set.direction(), DecodeSpec{}), d.vocab);
      const double ppl = fluency_ppl(lm, hyps);
      out["fluency_ppl"][to_string(set.direction())] = ppl;
      std::snprintf(buf, sizeof buf, "| %s | %.2f |\n", to_string(set.direction()).c_str(), ppl);
      md += buf;
    }
  }
  std::cout << md;
  if (!a.out.empty()) {
    write_json(fs::path(a.out) / ("analyze_" + a.which + ".json"), out);
    write_file(fs::path(a.out) / ("analyze_" + a.which + ".md"), md);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// translate / distill

struct TranslateArgs {
  std::string checkpoint, input, output, direction = "A-B";
  int beam = 1;
};

int cmd_translate(const TranslateArgs& a) {
  const auto dir = parse_direction(a.direction);
  const auto ck = load_checkpoint<float>(a.checkpoint);
  const auto raw = read_raw_corpus(a.input, dir.src);
  const auto src = encode(raw, ck.vocab);
  const auto out = translate(ck.params, src.sentences, dir, decode_spec(a.beam));
  std::ostringstream text;
  for (const auto& s : out) text << detokenize(decode(s, ck.vocab)) << '\n';
  if (a.output.empty())
    std::cout << text.str();
  else
    write_file(a.output, text.str());
  return 0;
}

struct DistillArgs {
  std::string data, teacher = "oracle", out;
};

int cmd_distill(const DistillArgs& a) {
  const auto d = load_data(a.data);
  Model keep;
  const auto teacher = make_teacher(a.teacher, d, &keep);
  const auto set = distillation_data(*teacher, d.mono_a, d.mono_b);
  write_parallel(a.out, set, d.vocab);
  std::printf("wrote %zu pairs to %s\n", set.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online self-training lab for unsupervised translation on synthetic language pairs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("gaplab ") + GAPLAB_VERSION);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic language pair");
  g->add_option("--spec", gen.spec, "SynthSpec JSON")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--mono", gen.sizes.mono_a, "Monolingual sentences per language");
  g->add_option("--test", gen.sizes.test_src_ori, "Test pairs per origin");
  g->add_option("--valid", gen.sizes.valid_src_ori, "Validation pairs per origin");
  g->add_option("--parallel", gen.sizes.parallel, "Parallel training pairs");

  std::string config, variant, seeds, out;
  auto* t = app.add_subcommand("train", "Train one variant over a list of seeds");
  t->add_option("--config", config, "Experiment JSON")->required();
  t->add_option("--variant", variant, "unmt, unmt_st, snmt, offline_st or kd");
  t->add_option("--seeds", seeds, "Comma-separated seeds");
  t->add_option("--out", out, "Run directory");

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate", "Translate a text file with a checkpoint");
  x->add_option("--checkpoint", tr.checkpoint)->required();
  x->add_option("--input", tr.input, "One sentence per line")->required();
  x->add_option("--output", tr.output, "Default: stdout");
  x->add_option("--direction", tr.direction, "A-B or B-A");
  x->add_option("--beam", tr.beam, "Beam size (1: greedy)");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "BLEU by split; two manifests add a significance column");
  e->add_option("--manifest", ev.manifests, "Run manifest (baseline first)")->required();
  e->add_option("--test", ev.test, "Test TSV (default: the run's data)");
  e->add_option("--splits", ev.splits, "Subset of full,src_ori,tgt_ori");
  e->add_option("--beam", ev.beam);
  e->add_option("--resamples", ev.resamples);
  e->add_option("--bootstrap-seed", ev.bootstrap_seed);
  e->add_option("--out", ev.out, "Report directory");

  AnalyzeArgs an;
  auto* y = app.add_subcommand("analyze", "Data-gap diagnostics");
  y->add_option("--which", an.which, "style, content, entities or fluency")->required();
  y->add_option("--manifest", an.manifest);
  y->add_option("--data", an.data);
  y->add_option("--seed", an.seed, "Run to analyze (default: first)");
  y->add_option("--natural-mix", an.natural_mix, "Share of natural text in the style LM corpus");
  y->add_option("--top-k", an.top_k);
  y->add_option("--out", an.out, "Report directory");

  DistillArgs di;
  auto* z = app.add_subcommand("distill", "Write teacher translations of the monolingual data as a parallel TSV");
  z->add_option("--data", di.data)->required();
  z->add_option("--teacher", di.teacher, "oracle or a checkpoint path");
  z->add_option("--out", di.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g) {
      gen.sizes.mono_b = gen.sizes.mono_a;
      gen.sizes.test_tgt_ori = gen.sizes.test_src_ori;
      gen.sizes.valid_tgt_ori = gen.sizes.valid_src_ori;
      return cmd_gen_data(gen);
    }
    if (*t) {
      auto exp = load_experiment(config);
      if (!variant.empty()) exp.variant = variant;
      if (!seeds.empty()) exp.seeds = parse_seeds(seeds);
      if (!out.empty()) exp.out = out;
      return cmd_train(std::move(exp));
    }
    if (*x) return cmd_translate(tr);
    if (*e) return cmd_evaluate(ev);
    if (*y) return cmd_analyze(an);
    if (*z) return cmd_distill(di);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const json::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 1;
}
