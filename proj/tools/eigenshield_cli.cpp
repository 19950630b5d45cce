// Copyright 2026 The EigenShield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Subcommands:
//   synth-corpus    generate a toy face corpus (and optional pairs file)
//   fit-basis       fit and persist the pixel-space eigenbasis
//   train-embedder  train and freeze the toy recognition model
//   train-defense   run the clonal-selection training schedule
//   attack          generate and persist an adversarial set (or sticker run)
//   evaluate        run the verification protocol, report EER
//   analyze         convert a training log to an analytics CSV
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "eigenshield/attacks.hpp"
#include "eigenshield/config.hpp"
#include "eigenshield/defense.hpp"
#include "eigenshield/eigenbasis.hpp"
#include "eigenshield/embedder.hpp"
#include "eigenshield/eval.hpp"
#include "eigenshield/facegen.hpp"
#include "eigenshield/image.hpp"
#include "eigenshield/trainer.hpp"

namespace fs = std::filesystem;
using namespace eigenshield;

namespace {

struct Cli {
  std::string config_file;
  std::string preset = "desk";
  std::vector<std::string> overrides;
  std::string output_dir;
  int64_t seed = -1;

  json resolve() const {
    json c = preset_by_name(preset);
    if (!config_file.empty()) {
      json file = load_config_file(config_file);
      if (file.contains("preset")) c = preset_by_name(file["preset"].get<std::string>());
      merge_config(c, file);
    }
    for (const auto& o : overrides) apply_override(c, o);
    if (!output_dir.empty()) c["output_dir"] = output_dir;
    if (seed >= 0) c["seed"] = seed;
    return c;
  }
};

fs::path out_dir(const json& c) {
  fs::path dir = c.at("output_dir").get<std::string>();
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Every command drops a manifest naming its inputs by checksum/content id.
void write_manifest(const json& c, const std::string& command, json inputs, json outputs) {
  json m;
  m["command"] = command;
  m["preset"] = c.value("preset", "desk");
  m["seed"] = c.at("seed").get<uint64_t>();
  m["inputs"] = std::move(inputs);
  m["outputs"] = std::move(outputs);
  write_json(out_dir(c) / (command + "-manifest.json"), m);
}

std::vector<Image> load_configured_corpus(const json& c) {
  const auto& cc = c.at("corpus");
  std::string root = cc.at("root").get<std::string>();
  require(!root.empty(), "config: corpus.root is not set");
  require(fs::is_directory(root), "config: corpus root does not exist: " + root);
  return load_corpus(root, cc.at("height").get<int>(), cc.at("width").get<int>());
}

EigenBasis load_configured_basis(const json& c) {
  fs::path dir = out_dir(c) / c.at("basis").at("dir").get<std::string>();
  require(fs::exists(dir / "manifest.json"),
          "basis checkpoint not found at " + dir.string() + " (run fit-basis first)");
  return load_basis(dir);
}

ToyConvEmbedder load_configured_embedder(const json& c) {
  fs::path dir = out_dir(c) / c.at("embedder").at("checkpoint").get<std::string>();
  require(fs::exists(dir / "manifest.json"),
          "embedder checkpoint not found at " + dir.string() + " (run train-embedder first)");
  return ToyConvEmbedder::load(dir);
}

AttackConfig attack_from_config(const json& c) {
  const auto& a = c.at("attack");
  AttackConfig cfg;
  cfg.kind = AttackConfig::kind_from_string(a.at("kind").get<std::string>());
  cfg.noise_ratio = a.value("noise_ratio", cfg.noise_ratio);
  cfg.eta = a.value("eta", cfg.eta);
  cfg.steps = a.value("steps", cfg.steps);
  cfg.step_size = a.value("step_size", cfg.step_size);
  cfg.patch_rows = a.value("patch_rows", cfg.patch_rows);
  cfg.patch_cols = a.value("patch_cols", cfg.patch_cols);
  cfg.anchor_row = a.value("anchor_row", cfg.anchor_row);
  cfg.anchor_col = a.value("anchor_col", cfg.anchor_col);
  cfg.sticker_steps = a.value("sticker_steps", cfg.sticker_steps);
  cfg.sticker_step_size = a.value("sticker_step_size", cfg.sticker_step_size);
  cfg.seed = c.at("seed").get<uint64_t>();
  return cfg;
}

PairProtocol configured_pairs(const json& c, const std::vector<Image>& corpus) {
  const auto& pc = c.at("pairs");
  std::string file = pc.value("file", "");
  PairProtocol pairs;
  if (!file.empty() && fs::exists(file)) {
    pairs = load_pairs(file, corpus);
  } else {
    pairs = build_pairs(corpus, pc.at("n_pos").get<int>(), pc.at("n_neg").get<int>(),
                        pc.at("seed").get<uint64_t>());
  }
  pairs.perturbed_side = pc.value("perturbed_side", "first") == std::string("second")
                             ? PairProtocol::PerturbedSide::second
                             : PairProtocol::PerturbedSide::first;
  return pairs;
}

// ---------------------------------------------------------------------------

int cmd_synth_corpus(const json& c) {
  const auto& cc = c.at("corpus");
  FaceGenConfig g;
  g.rows = cc.at("height").get<int>();
  g.cols = cc.at("width").get<int>();
  g.n_identities = c.at("synth").at("identities").get<int>();
  g.per_identity = c.at("synth").at("per_identity").get<int>();
  g.seed = c.at("seed").get<uint64_t>();
  auto corpus = generate_face_corpus(g);

  fs::path root = cc.at("root").get<std::string>();
  require(!root.empty(), "config: corpus.root is not set");
  write_corpus(root, corpus);

  std::string pairs_file = c.at("pairs").value("file", "");
  if (!pairs_file.empty()) {
    auto pairs = build_pairs(corpus, c.at("pairs").at("n_pos").get<int>(),
                             c.at("pairs").at("n_neg").get<int>(),
                             c.at("pairs").at("seed").get<uint64_t>());
    save_pairs(pairs_file, pairs, corpus);
  }
  std::cout << "wrote " << corpus.size() << " images under " << root.string() << "\n";
  write_manifest(c, "synth-corpus", json{{"seed", g.seed}},
                 json{{"corpus_root", root.string()}, {"images", corpus.size()}});
  return 0;
}

int cmd_fit_basis(const json& c) {
  validate_dimension_chain(c);
  auto corpus = load_configured_corpus(c);
  auto basis = fit_eigenbasis(corpus, c.at("basis").at("d_e").get<int>());
  fs::path dir = out_dir(c) / c.at("basis").at("dir").get<std::string>();
  uint32_t crc = save_basis(dir, basis);
  std::cout << "basis: d_e=" << basis.d_e() << " energy_ratio=" << basis.energy_ratio()
            << " content_id=" << basis.content_id() << "\n";
  write_manifest(c, "fit-basis",
                 json{{"corpus_root", c.at("corpus").at("root").get<std::string>()},
                      {"images", corpus.size()}},
                 json{{"basis_dir", dir.string()},
                      {"basis_content_id", basis.content_id()},
                      {"arrays_crc", crc},
                      {"energy_ratio", basis.energy_ratio()}});
  return 0;
}

int cmd_train_embedder(const json& c) {
  auto corpus = load_configured_corpus(c);
  const auto& e = c.at("embedder");
  EmbedderTrainConfig cfg;
  cfg.arch = embedder_spec_from_config(c);
  const auto& t = e.at("train");
  cfg.scale = t.value("scale", cfg.scale);
  cfg.margin = t.value("margin", cfg.margin);
  cfg.lr = t.value("lr", cfg.lr);
  cfg.momentum = t.value("momentum", cfg.momentum);
  cfg.batch_size = t.value("batch_size", cfg.batch_size);
  cfg.max_steps = t.value("max_steps", cfg.max_steps);
  cfg.eval_every = t.value("eval_every", cfg.eval_every);
  cfg.holdout_per_identity = t.value("holdout_per_identity", cfg.holdout_per_identity);
  cfg.val_pos_pairs = t.value("val_pos_pairs", cfg.val_pos_pairs);
  cfg.val_neg_pairs = t.value("val_neg_pairs", cfg.val_neg_pairs);
  cfg.eer_target = t.value("eer_target", cfg.eer_target);
  cfg.seed = c.at("seed").get<uint64_t>();

  EmbedderTrainReport report;
  ToyConvEmbedder embedder = train_toy_embedder(corpus, cfg, &report);
  fs::path dir = out_dir(c) / e.at("checkpoint").get<std::string>();
  embedder.save(dir);

  // registry: model name -> checkpoint path
  fs::path registry = out_dir(c) / "embedders.json";
  json reg = fs::exists(registry) ? load_json_file(registry) : json::object();
  reg[e.at("name").get<std::string>()] = dir.string();
  write_json(registry, reg);

  std::cout << "embedder: holdout EER " << report.final_eer << " after " << report.steps_run
            << " steps\n";
  write_manifest(c, "train-embedder",
                 json{{"corpus_root", c.at("corpus").at("root").get<std::string>()}},
                 json{{"checkpoint", dir.string()},
                      {"holdout_eer", report.final_eer},
                      {"steps", report.steps_run},
                      {"param_hash", embedder.param_hash()}});
  return 0;
}

int cmd_train_defense(const json& c, bool resume) {
  validate_dimension_chain(c);
  auto corpus = load_configured_corpus(c);
  auto basis = load_configured_basis(c);
  auto embedder = load_configured_embedder(c);
  require(basis.d_e() == c.at("basis").at("d_e").get<int>(),
          "config/basis mismatch: persisted basis has different d_e");

  TrainerConfig tcfg = TrainerConfig::from_json(c.at("trainer"));
  tcfg.seed = c.at("seed").get<uint64_t>();
  fs::path ckpt = out_dir(c) / c.at("defense").at("checkpoint").get<std::string>();

  std::unique_ptr<ClonalTrainer> trainer;
  if (resume) {
    require(fs::exists(ckpt / "manifest.json"),
            "resume requested but no checkpoint at " + ckpt.string());
    trainer = std::make_unique<ClonalTrainer>(
        ClonalTrainer::from_checkpoint(ckpt, basis, embedder));
  } else {
    DefenseConfig dcfg;
    dcfg.d_n = c.at("defense").at("d_n").get<int>();
    dcfg.d_m = c.at("defense").at("d_m").get<int>();
    dcfg.d_e = basis.d_e();
    dcfg.memory_enabled = c.at("defense").value("memory_enabled", true);
    dcfg.softmax_read = c.at("defense").value("softmax_read", false);
    dcfg.ema_includes_memory = c.at("defense").value("ema_includes_memory", true);
    dcfg.memory_epsilon = tcfg.epsilon;
    DefenseState state = DefenseState::init(analyzer_spec_from_config(c), dcfg,
                                            basis.content_id(), tcfg.seed);
    trainer = std::make_unique<ClonalTrainer>(std::move(state), basis, embedder, tcfg);
  }

  fs::path log_path = out_dir(c) / "train-log.jsonl";
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write training log " + log_path.string());

  ClonalTrainer::RunOptions opts;
  opts.checkpoint_dir = ckpt;
  opts.checkpoint_interval = c.at("trainer").value("checkpoint_interval", 0);
  opts.on_record = [&log](const TrainLogRecord& rec) { log << rec.to_json().dump() << "\n"; };

  auto records = trainer->run(corpus, opts);
  std::cout << "trained to step " << trainer->step() << "; log at " << log_path.string()
            << "\n";
  write_manifest(c, "train-defense",
                 json{{"basis_content_id", basis.content_id()},
                      {"embedder_param_hash", embedder.param_hash()},
                      {"corpus_root", c.at("corpus").at("root").get<std::string>()}},
                 json{{"checkpoint", ckpt.string()},
                      {"steps", trainer->step()},
                      {"log", log_path.string()},
                      {"records_this_run", records.size()}});
  return 0;
}

int cmd_attack(const json& c) {
  auto corpus = load_configured_corpus(c);
  auto embedder = load_configured_embedder(c);
  AttackConfig acfg = attack_from_config(c);
  fs::path set_dir = out_dir(c) / c.at("attack").at("set_dir").get<std::string>();

  if (acfg.kind == AttackConfig::Kind::sticker) {
    int gallery_size = std::min<int>(c.at("attack").value("gallery_size", 200),
                                     static_cast<int>(corpus.size()));
    int target_index = c.at("attack").value("target_index", 0);
    require(target_index >= 0 && target_index < static_cast<int>(corpus.size()),
            "attack: target_index outside the corpus");
    // gallery: one image per identity, excluding the target identity
    std::vector<Image> gallery;
    std::string target_identity = corpus[static_cast<size_t>(target_index)].identity;
    std::unordered_map<std::string, bool> used;
    for (const auto& im : corpus) {
      if (static_cast<int>(gallery.size()) >= gallery_size) break;
      if (im.identity == target_identity || used[im.identity]) continue;
      used[im.identity] = true;
      gallery.push_back(im);
    }
    require(!gallery.empty(), "attack: no gallery images outside the target identity");
    StickerResult res =
        attack_sticker(gallery, corpus[static_cast<size_t>(target_index)], embedder, acfg);

    TensorContainer out;
    out.add("patch", res.patch, "f8");
    for (size_t i = 0; i < res.patched.size(); ++i)
      out.add("img" + std::to_string(i), res.patched[i].pix, "f8");
    json traj = json::array();
    for (double v : res.objective_trajectory) traj.push_back(v);
    out.meta()["kind"] = "sticker-set";
    out.meta()["target_id"] = corpus[static_cast<size_t>(target_index)].id;
    out.meta()["gallery"] = [&] {
      json g = json::array();
      for (const auto& im : res.patched) g.push_back(im.id);
      return g;
    }();
    out.meta()["objective_trajectory"] = traj;
    out.save(set_dir);
    std::cout << "sticker objective " << res.objective_trajectory.front() << " -> "
              << res.objective_trajectory.back() << "; set at " << set_dir.string() << "\n";
    write_manifest(c, "attack",
                   json{{"embedder_param_hash", embedder.param_hash()},
                        {"target", corpus[static_cast<size_t>(target_index)].id}},
                   json{{"set_dir", set_dir.string()}, {"gallery_size", gallery.size()}});
    return 0;
  }

  // budgeted attacks: perturb the designated side of every configured pair
  auto pairs = configured_pairs(c, corpus);
  std::optional<EigenBasis> basis;
  if (acfg.adaptive()) basis = load_configured_basis(c);

  const bool first = pairs.perturbed_side == PairProtocol::PerturbedSide::first;
  PerturbedSet set;
  auto attack_index = [&](int idx) {
    if (set.count(idx)) return;
    const Image& clean = corpus[static_cast<size_t>(idx)];
    AttackObjective obj = objective_feature_distance(embedder, embedder.embed(clean));
    set.emplace(idx, run_attack(clean, std::move(obj), acfg, basis ? &*basis : nullptr));
  };
  for (const auto& p : pairs.positives) attack_index(first ? p.a : p.b);
  for (const auto& p : pairs.negatives) attack_index(first ? p.a : p.b);

  save_adversarial_set(set_dir, corpus, set, acfg);
  double mean_ratio = 0.0;
  for (const auto& [idx, im] : set)
    mean_ratio += noise_magnitude(corpus[static_cast<size_t>(idx)], im);
  mean_ratio /= static_cast<double>(set.size());
  std::cout << "attacked " << set.size() << " images, mean I(zeta) " << mean_ratio
            << "; set at " << set_dir.string() << "\n";
  write_manifest(c, "attack",
                 json{{"embedder_param_hash", embedder.param_hash()},
                      {"kind", AttackConfig::kind_to_string(acfg.kind)}},
                 json{{"set_dir", set_dir.string()},
                      {"images", set.size()},
                      {"mean_noise_ratio", mean_ratio}});
  return 0;
}

int cmd_evaluate(const json& c, bool use_persisted_set) {
  validate_dimension_chain(c);
  auto corpus = load_configured_corpus(c);
  auto embedder = load_configured_embedder(c);
  auto pairs = configured_pairs(c, corpus);

  const bool defense_on = c.at("eval").value("defense", true);
  std::optional<EigenBasis> basis;
  std::optional<DefenseState> defense;
  if (defense_on) {
    basis = load_configured_basis(c);
    fs::path ckpt = out_dir(c) / c.at("defense").at("checkpoint").get<std::string>();
    require(fs::exists(ckpt / "manifest.json"),
            "defense checkpoint not found at " + ckpt.string());
    TensorContainer cc = TensorContainer::load(ckpt);
    defense = defense_from_container(cc, cc.meta(), "");
    require(defense->basis_id == basis->content_id(),
            "defense checkpoint was trained against a different basis");
  }

  std::string attack_kind = c.at("attack").at("kind").get<std::string>();
  AttackConfig acfg = attack_from_config(c);
  const bool attacking = attack_kind != "none";
  std::optional<PerturbedSet> persisted;
  if (use_persisted_set) {
    fs::path set_dir = out_dir(c) / c.at("attack").at("set_dir").get<std::string>();
    persisted = load_adversarial_set(set_dir, corpus);
  }
  if (acfg.adaptive() && !basis) basis = load_configured_basis(c);

  VerificationSetup setup;
  setup.defense = defense ? &*defense : nullptr;
  setup.basis = basis ? &*basis : nullptr;
  setup.embedder = &embedder;
  setup.attack = (attacking && !persisted) ? &acfg : nullptr;
  setup.perturbed = persisted ? &*persisted : nullptr;
  setup.experiment_id = std::string("eval-") + (defense_on ? "defended" : "undefended") + "-" +
                        (persisted ? "persisted" : attack_kind);

  EvalReport report = run_verification(setup, corpus, pairs);

  std::cout << EvalReport::table_header() << "\n" << report.table_row() << "\n";
  fs::path report_path = out_dir(c) / (setup.experiment_id + ".json");
  write_json(report_path, report.to_json());

  // optional curve CSV for plotting
  fs::path curve_path = out_dir(c) / (setup.experiment_id + "-curve.csv");
  {
    std::ofstream curve(curve_path, std::ios::trunc);
    curve << "threshold,far,frr\n";
    for (const auto& pt : report.curve)
      curve << pt.threshold << "," << pt.far << "," << pt.frr << "\n";
  }
  write_manifest(c, "evaluate",
                 json{{"embedder_param_hash", embedder.param_hash()},
                      {"defense", defense_on},
                      {"attack", attack_kind}},
                 json{{"report", report_path.string()},
                      {"eer", report.eer},
                      {"curve", curve_path.string()}});
  return 0;
}

int cmd_analyze(const json& c) {
  fs::path log_path = out_dir(c) / "train-log.jsonl";
  require(fs::exists(log_path), "no training log at " + log_path.string());
  std::ifstream in(log_path);
  fs::path csv_path = out_dir(c) / "antibody-analytics.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "step,phase,s0,mean_a,p_mutation,v,loss\n";
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    csv << rec["step"].get<int64_t>() << "," << rec["phase"].get<std::string>() << ","
        << rec["s0"].get<double>() << "," << rec["mean_a"].get<double>() << ","
        << rec["p_mutation"].get<double>() << ",";
    if (rec["v"].is_null())
      csv << "";
    else
      csv << rec["v"].get<double>();
    csv << "," << rec["loss"].get<double>() << "\n";
    ++rows;
  }
  std::cout << "wrote " << rows << " analytics rows to " << csv_path.string() << "\n";
  write_manifest(c, "analyze", json{{"log", log_path.string()}},
                 json{{"csv", csv_path.string()}, {"rows", rows}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eigenvector-subset adversarial defense for face verification"};
  app.require_subcommand(1);

  Cli cli;
  app.add_option("--config", cli.config_file, "JSON config file");
  app.add_option("--preset", cli.preset, "base preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--set", cli.overrides, "override a config field: key.path=value");
  app.add_option("--output-dir", cli.output_dir, "output directory");
  app.add_option("--seed", cli.seed, "master seed");

  auto* synth = app.add_subcommand("synth-corpus", "generate a toy face corpus");
  auto* fit = app.add_subcommand("fit-basis", "fit and persist the eigenbasis");
  auto* temb = app.add_subcommand("train-embedder", "train the toy recognition model");
  auto* tdef = app.add_subcommand("train-defense", "run clonal-selection training");
  bool resume = false;
  tdef->add_flag("--resume", resume, "resume from the last checkpoint");
  auto* atk = app.add_subcommand("attack", "generate a persisted adversarial set");
  auto* ev = app.add_subcommand("evaluate", "run the verification protocol");
  bool from_set = false;
  ev->add_flag("--adversarial-set", from_set, "evaluate the persisted adversarial set");
  auto* ana = app.add_subcommand("analyze", "training log -> analytics CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    json c = cli.resolve();
    if (synth->parsed()) return cmd_synth_corpus(c);
    if (fit->parsed()) return cmd_fit_basis(c);
    if (temb->parsed()) return cmd_train_embedder(c);
    if (tdef->parsed()) return cmd_train_defense(c, resume);
    if (atk->parsed()) return cmd_attack(c);
    if (ev->parsed()) return cmd_evaluate(c, from_set);
    if (ana->parsed()) return cmd_analyze(c);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
