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

#ifndef EIGENSHIELD_CONFIG_HPP
#define EIGENSHIELD_CONFIG_HPP

// Experiment configuration: one declarative JSON document, seeded from a
// preset ("desk" for fast small-scale runs, "paper" for the reference
// hyper-parameter set), overridden by a config file and then by individual
// --set flags. Every command validates the dimension chain
// image -> analyzer -> memory -> head -> basis before touching data.

#include <filesystem>
#include <fstream>
#include <string>

#include "eigenshield/common.hpp"
#include "eigenshield/nn.hpp"
#include "eigenshield/tensorio.hpp"
#include "eigenshield/trainer.hpp"

namespace eigenshield {

/// Default convolutional trunk: stride-2 3x3 convs until the spatial extent
/// drops below 10, then flatten and a dense map to out_dim.
inline json make_conv_spec(int height, int width, int out_dim, int base_channels = 8) {
  json spec;
  spec["input"] = {{"channels", 1}, {"height", height}, {"width", width}};
  json layers = json::array();
  int h = height, w = width, ch = base_channels;
  while (h > 9 || w > 9) {
    layers.push_back({{"type", "conv"},
                      {"out_channels", ch},
                      {"kernel", 3},
                      {"stride", 2},
                      {"pad", 1}});
    layers.push_back({{"type", "relu"}});
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    ch = std::min(2 * ch, 4 * base_channels);
  }
  layers.push_back({{"type", "flatten"}});
  layers.push_back({{"type", "dense"}, {"out", out_dim}});
  spec["layers"] = layers;
  return spec;
}

inline json desk_preset() {
  json c;
  c["preset"] = "desk";
  c["seed"] = 1;
  c["output_dir"] = "out";
  c["corpus"] = {{"root", ""}, {"height", 64}, {"width", 64}};
  c["synth"] = {{"identities", 40}, {"per_identity", 10}};
  c["pairs"] = {{"file", ""}, {"n_pos", 200}, {"n_neg", 200},
                {"seed", 5}, {"perturbed_side", "first"}};
  c["basis"] = {{"d_e", 256}, {"dir", "basis"}};
  c["defense"] = {{"d_n", 64}, {"d_m", 32},
                  {"memory_enabled", true}, {"softmax_read", false},
                  {"ema_includes_memory", true}, {"analyzer_spec_file", ""},
                  {"checkpoint", "defense"}};
  c["trainer"] = TrainerConfig{}.to_json();
  c["trainer"]["checkpoint_interval"] = 1000;
  c["embedder"] = {{"name", "toy"}, {"dim", 32}, {"checkpoint", "embedder"},
                   {"arch_file", ""},
                   {"train", {{"scale", 16.0}, {"margin", 0.2}, {"lr", 0.05},
                              {"momentum", 0.9}, {"batch_size", 16}, {"max_steps", 4000},
                              {"eval_every", 250}, {"holdout_per_identity", 2},
                              {"val_pos_pairs", 200}, {"val_neg_pairs", 200},
                              {"eer_target", 0.05}}}};
  c["attack"] = {{"kind", "fgsm"}, {"noise_ratio", 0.04}, {"eta", 0.0}, {"steps", 10},
                 {"step_size", 0.0}, {"patch_rows", 20}, {"patch_cols", 72},
                 {"anchor_row", 4}, {"anchor_col", -1}, {"sticker_steps", 100},
                 {"sticker_step_size", 0.05}, {"gallery_size", 200}, {"target_index", 0},
                 {"set_dir", "adversarial"}};
  c["eval"] = {{"defense", true}, {"sticker_threshold", 0.2}};
  return c;
}

/// The reference hyper-parameter set: 112x112 grayscale inputs, top 1500
/// eigenvectors, 512-d noise features, 128 memory items, 50k warm-up and
/// 250k adversarial steps, k=10 clones, SGD(0.01, 0.9) at batch size 4.
inline json paper_preset() {
  json c = desk_preset();
  c["preset"] = "paper";
  c["corpus"]["height"] = 112;
  c["corpus"]["width"] = 112;
  c["pairs"]["n_pos"] = 3000;
  c["pairs"]["n_neg"] = 3000;
  c["basis"]["d_e"] = 1500;
  c["defense"]["d_n"] = 512;
  c["defense"]["d_m"] = 128;
  c["trainer"]["warmup_steps"] = 50000;
  c["trainer"]["adversarial_steps"] = 250000;
  c["embedder"]["dim"] = 128;
  return c;
}

inline json preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ValidationError("unknown preset '" + name + "' (want desk or paper)");
}

/// Recursive merge: values in overlay replace/extend base.
inline void merge_config(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_config(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

/// Applies one "a.b.c=value" override; the value is parsed as JSON when
/// possible and treated as a string otherwise.
inline void apply_override(json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  require(eq != std::string::npos, "--set expects key.path=value, got '" + assignment + "'");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  json* node = &config;
  size_t pos = 0;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    require(!key.empty(), "--set: empty key component in '" + assignment + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

inline json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path.string());
  json parsed = json::parse(in, nullptr, false);
  if (parsed.is_discarded()) throw ValidationError("config file is not valid JSON: " + path.string());
  return parsed;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open JSON file: " + path.string());
  json parsed = json::parse(in, nullptr, false);
  if (parsed.is_discarded()) throw ValidationError("not valid JSON: " + path.string());
  return parsed;
}

/// Analyzer spec from the config (file override or the generated default).
inline json analyzer_spec_from_config(const json& c) {
  const auto& d = c.at("defense");
  std::string file = d.value("analyzer_spec_file", "");
  if (!file.empty()) return load_json_file(file);
  return make_conv_spec(c.at("corpus").at("height").get<int>(),
                        c.at("corpus").at("width").get<int>(),
                        d.at("d_n").get<int>());
}

inline json embedder_spec_from_config(const json& c) {
  const auto& e = c.at("embedder");
  std::string file = e.value("arch_file", "");
  if (!file.empty()) return load_json_file(file);
  return make_conv_spec(c.at("corpus").at("height").get<int>(),
                        c.at("corpus").at("width").get<int>(),
                        e.at("dim").get<int>(), 6);
}

/// Checks the full dimension chain before any data is touched:
/// image -> analyzer (d_n) -> memory (d_n rows) -> head (d_n -> d_e) -> basis.
inline void validate_dimension_chain(const json& c) {
  const int h = c.at("corpus").at("height").get<int>();
  const int w = c.at("corpus").at("width").get<int>();
  const int d_n = c.at("defense").at("d_n").get<int>();
  const int d_m = c.at("defense").at("d_m").get<int>();
  const int d_e = c.at("basis").at("d_e").get<int>();
  require(h > 0 && w > 0, "config: image dims must be positive");
  require(d_n > 0 && d_m > 0 && d_e > 0, "config: defense dims must be positive");
  require(d_e <= h * w, "config: d_e cannot exceed the pixel dimension");

  json spec = analyzer_spec_from_config(c);
  Network probe = Network::from_spec(spec, 0);
  require(probe.in_shape().h == h && probe.in_shape().w == w,
          "config: analyzer spec input dims do not match the corpus dims");
  require(probe.out_dim() == d_n,
          "config: analyzer output dim " + std::to_string(probe.out_dim()) +
              " != defense d_n " + std::to_string(d_n));
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_CONFIG_HPP
