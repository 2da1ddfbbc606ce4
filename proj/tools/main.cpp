// pathdiff command-line driver: data generation, training, sampling,
// evaluation, the p_split ablation and the oracle self-check.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pathdiff/dataset.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/evaluation.hpp"
#include "pathdiff/experiment.hpp"
#include "pathdiff/io.hpp"
#include "pathdiff/oracle_suite.hpp"
#include "pathdiff/sample.hpp"
#include "pathdiff/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pathdiff;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> extras;
};

/// Turns leftover "--section.key value" / "--section.key=value" arguments
/// (and "--seed N") into config overrides.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    const std::string body = a.rfind("--", 0) == 0 ? a.substr(2) : std::string();
    const bool top_level = body == "seed" || body.rfind("seed=", 0) == 0;  // the only scalar at the root
    if (body.empty() || (body.find('.') == std::string::npos && !top_level))
      throw CLI::ExtrasError("unexpected argument " + a, {a});
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw CLI::ExtrasError("override " + a + " needs a value", {a});
      out.emplace_back(body, args[++i]);
    }
  }
  return out;
}

ExperimentConfig load(const Common& c) { return load_config(c.config_path, parse_overrides(c.extras)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string manifest_crc(const fs::path& dir) { return io::crc32_hex(io::read_bytes(dir / "manifest.json")); }

UnpairedCorpus load_test(const fs::path& data) {
  UnpairedCorpus test = load_corpus(data / "test");
  test.truth = load_truth(data / "test");
  return test;
}

struct LoadedModel {
  CheckpointHeader header;
  DenoiserParams<float> params;
  std::string crc;
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.params = load_checkpoint<float>(path, &m.header);
  m.crc = m.header.blob_crc32;
  return m;
}

fs::path default_checkpoint(const ExperimentConfig& cfg) { return fs::path(cfg.paths.run_dir) / "checkpoint.json"; }

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common, std::string out) {
  const ExperimentConfig cfg = load(common);
  const fs::path dir = out.empty() ? fs::path(cfg.paths.data_dir) : fs::path(out);
  const std::uint64_t corpus_seed = cfg.stage_seed(ExperimentConfig::kCorpus);
  UnpairedCorpus corpus = cfg.world.kind == "gmm"
                              ? gen_gmm_corpus(cfg.world.gmm, cfg.world.n_t2i, cfg.world.n_m2i, corpus_seed)
                              : make_unpaired(cfg.world.toy, cfg.world.n_t2i, cfg.world.n_m2i, corpus_seed,
                                              default_thread_count());
  auto [train, test] = split(corpus, cfg.world.split_ratio, cfg.stage_seed(ExperimentConfig::kSplit));
  const json provenance{{"config", to_json_document(cfg)}, {"seed", cfg.seed}};
  save_corpus(train, dir / "train", json{{"split", "train"}, {"experiment", provenance}});
  save_corpus(test, dir / "test", json{{"split", "test"}, {"experiment", provenance}});
  io::write_text(dir / "config.json", to_json_document(cfg).dump(2) + "\n");
  std::printf("kind %s\n", cfg.world.kind.c_str());
  std::printf("train: t2i %zu m2i %zu\n", train.t2i.size(), train.m2i.size());
  std::printf("test:  t2i %zu m2i %zu\n", test.t2i.size(), test.m2i.size());
  std::printf("manifest crc32 train %s test %s\n", manifest_crc(dir / "train").c_str(), manifest_crc(dir / "test").c_str());
  return 0;
}

struct TrainOutcome {
  std::string crc;
  double final_loss = 0.0;
  std::int64_t steps = 0;
};

TrainOutcome run_training(const ExperimentConfig& cfg, const fs::path& data, const fs::path& out, bool quiet = false) {
  const UnpairedCorpus corpus = load_corpus(data / "train");
  const Denoiser<float> model(cfg.denoiser());
  const NoiseSchedule schedule = cfg.schedule.build();
  const TrainConfig tc = cfg.train_config();
  const json extra{{"experiment", to_json_document(cfg)},
                   {"train", tc},
                   {"data_manifest_crc32", manifest_crc(data / "train")}};
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(model, corpus, schedule, tc, default_thread_count(),
                            [&](int epoch, std::int64_t step, const DenoiserParams<float>& params, const TrainLog& log) {
                              char stem[32];
                              std::snprintf(stem, sizeof stem, "checkpoint_epoch%03d", epoch);
                              fs::create_directories(out);
                              save_checkpoint(out / stem, model.config(), params, step, tc.seed, extra);
                              if (quiet) return;
                              std::fprintf(stderr, "epoch %d step %lld loss %.5f (t2i %.5f m2i %.5f) %.1fs\n", epoch,
                                           static_cast<long long>(step), log.step_losses.back(), log.running_t2i,
                                           log.running_m2i, seconds_since(t0));
                            });
  fs::create_directories(out);
  std::ofstream csv(out / "train_log.csv", std::ios::binary | std::ios::trunc);
  result.log.write_csv(csv);
  csv.close();
  TrainOutcome o;
  o.crc = save_checkpoint(out / "checkpoint", model.config(), result.params, result.steps, tc.seed, extra);
  o.steps = result.steps;
  o.final_loss = result.log.step_losses.empty() ? 0.0 : result.log.step_losses.back();
  return o;
}

int cmd_train(const Common& common, std::string data, std::string out) {
  const ExperimentConfig cfg = load(common);
  const fs::path d = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  const fs::path o = out.empty() ? fs::path(cfg.paths.run_dir) : fs::path(out);
  const auto r = run_training(cfg, d, o);
  io::write_text(o / "config.json", to_json_document(cfg).dump(2) + "\n");
  std::printf("steps %lld final loss %.6f checkpoint crc32 %s\n", static_cast<long long>(r.steps), r.final_loss,
              r.crc.c_str());
  return 0;
}

json describe(const ConditionPair& c) {
  json j{{"mode", to_string(c.mode())}};
  j["text"] = c.text.is_null() ? json() : json(c.text.token());
  if (!c.mask.is_null()) {
    j["mask_crc32"] = io::crc32_hex(c.mask.labels().data(), c.mask.labels().size());
    if (c.mask.height() == 1 && c.mask.width() == 1) j["mask"] = c.mask.at(0, 0);
  }
  return j;
}

int cmd_sample(const Common& common, std::string checkpoint, std::string mode, std::string data, std::string out, int n) {
  const ExperimentConfig cfg = load(common);
  const fs::path ck = checkpoint.empty() ? default_checkpoint(cfg) : fs::path(checkpoint);
  const fs::path d = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  const fs::path o = out.empty() ? fs::path(cfg.paths.run_dir) / "samples" : fs::path(out);
  const LoadedModel lm = load_model(ck);
  const Denoiser<float> model(lm.header.config);
  const NoiseSchedule schedule = cfg.schedule.build();
  const SamplerOptions opts = cfg.sampler_options();
  const std::size_t count = std::size_t(n > 0 ? n : cfg.eval.num_samples);

  std::vector<ConditionPair> conds;
  if (cfg.world.kind == "gmm") {
    conds = gmm_conditions(mode, cfg.world.gmm, count);
  } else {
    const UnpairedCorpus test = load_test(d);
    const auto seg = SegmenterSpec::from_world(cfg.world.toy, cfg.eval.segmenter_min_area);
    conds = conditions_for_mode(mode, test, count, seg, cfg.stage_seed(ExperimentConfig::kEval)).conds;
  }
  const auto samples = generate_each(network_model(model, lm.params), conds, opts, schedule,
                                     lm.header.config.image_shape(), default_thread_count());
  fs::create_directories(o);
  json sidecar{{"mode", mode},
               {"count", samples.size()},
               {"checkpoint", ck.filename().string()},
               {"checkpoint_crc32", lm.crc},
               {"sampler", opts},
               {"experiment", to_json_document(cfg)}};
  sidecar["conditions"] = json::array();
  for (const auto& c : conds) sidecar["conditions"].push_back(describe(c));
  std::string artifact;
  if (cfg.world.kind == "gmm") {
    std::ostringstream csv;
    csv << "index,x,y\n";
    char buf[96];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, double(samples[i][0]), double(samples[i][1]));
      csv << buf;
    }
    artifact = mode + ".csv";
    io::write_text(o / artifact, csv.str());
  } else {
    artifact = mode + ".ppm";
    io::write_bytes(o / artifact, io::encode_ppm(io::tile(samples, 10)));
    io::Bytes raw;
    for (const auto& s : samples) {
      const auto b = io::encode_f32_hwc(s);
      raw.insert(raw.end(), b.begin(), b.end());
    }
    io::write_bytes(o / (mode + ".f32"), raw);
    sidecar["raw"] = mode + ".f32";
    sidecar["raw_crc32"] = io::crc32_hex(raw);
  }
  sidecar["artifact"] = artifact;
  sidecar["artifact_crc32"] = io::crc32_hex(io::read_bytes(o / artifact));
  io::write_text(o / (mode + ".json"), sidecar.dump(2) + "\n");
  std::printf("%zu samples -> %s\n", samples.size(), (o / artifact).string().c_str());
  return 0;
}

json evaluate_checkpoint(const ExperimentConfig& cfg, const fs::path& ck, const fs::path& data) {
  const LoadedModel lm = load_model(ck);
  const Denoiser<float> model(lm.header.config);
  const NoiseSchedule schedule = cfg.schedule.build();
  const SamplerOptions opts = cfg.sampler_options();
  const auto eps = network_model(model, lm.params);
  const int threads = default_thread_count();
  json report{{"kind", cfg.world.kind},
              {"checkpoint_crc32", lm.crc},
              {"sampler", opts},
              {"seed", cfg.seed},
              {"experiment", to_json_document(cfg)}};
  report["modes"] = json::object();
  if (cfg.world.kind == "gmm") {
    for (const auto& mode : cfg.eval.modes) {
      if (mode == "silver" || mode == "random-pair") continue;
      const auto conds = gmm_conditions(mode, cfg.world.gmm, std::size_t(cfg.eval.num_samples));
      const auto points = generate_each(eps, conds, opts, schedule, cfg.world.gmm.image_shape(), threads);
      report["modes"][mode] = score_gmm(mode, cfg.world.gmm, conds, points);
    }
    return report;
  }
  const UnpairedCorpus test = load_test(data);
  report["data_manifest_crc32"] = manifest_crc(data / "test");
  const EvalContext ctx = EvalContext::for_world(cfg.world.toy, cfg.eval.segmenter_min_area, cfg.eval.alignment_renders,
                                                 cfg.stage_seed(ExperimentConfig::kEval));
  const auto n = std::size_t(cfg.eval.num_samples);
  {  // real-vs-real references: segmenter bound and feature-distance floor
    const auto held = held_out_scenes(test, n);
    std::vector<ImageF> images;
    std::vector<MaskCondition> masks;
    std::vector<TextCondition> texts;
    for (const auto& s : held) {
      images.push_back(s.image);
      masks.push_back(s.mask);
      texts.push_back(s.text);
    }
    const auto f = ctx.features(images, threads);
    const auto a = alignment(ctx.alignment, images, texts);
    report["real"] = {{"count", images.size()},
                      {"toy_fd_self", frechet(f, f)},
                      {"fs1", fs1(images, masks, ctx.segmenter)},
                      {"alignment", a.mean_score},
                      {"alignment_accuracy", a.accuracy}};
  }
  for (const auto& mode : cfg.eval.modes) {
    const auto mc = conditions_for_mode(mode, test, n, ctx.segmenter, cfg.stage_seed(ExperimentConfig::kEval));
    report["modes"][mode] = evaluate_mode(eps, mc, opts, schedule, ctx, threads);
  }
  return report;
}

int cmd_eval(const Common& common, std::string checkpoint, std::string data, std::string out) {
  const ExperimentConfig cfg = load(common);
  const fs::path ck = checkpoint.empty() ? default_checkpoint(cfg) : fs::path(checkpoint);
  const fs::path d = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  const fs::path o = out.empty() ? fs::path(cfg.paths.run_dir) / "report.json" : fs::path(out);
  const json report = evaluate_checkpoint(cfg, ck, d);
  io::write_text(o, report.dump(2) + "\n");
  std::cout << report["modes"].dump(2) << "\n";
  return 0;
}

int cmd_ablate(const Common& common, std::string data, std::string out, std::vector<double> values) {
  const ExperimentConfig base = load(common);
  const fs::path d = data.empty() ? fs::path(base.paths.data_dir) : fs::path(data);
  const fs::path o = out.empty() ? fs::path(base.paths.run_dir) / "ablate_psplit" : fs::path(out);
  fs::create_directories(o);
  std::ostringstream csv;
  csv << "p_split,seed,steps,final_loss,checkpoint_crc32";
  const std::vector<std::string> cols{"toy_fd", "toy_kid", "fs1", "fs2", "alignment", "alignment_accuracy"};
  for (const auto& mode : base.eval.modes)
    for (const auto& c : cols) csv << ',' << mode << '.' << c;
  csv << '\n';
  for (double p : values) {
    ExperimentConfig cfg = base;
    cfg.train.p_split = p;
    cfg.validate();
    char tag[32];
    std::snprintf(tag, sizeof tag, "p%.2f", p);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_training(cfg, d, o / tag, true);
    const json report = evaluate_checkpoint(cfg, o / tag / "checkpoint.json", d);
    io::write_text(o / tag / "report.json", report.dump(2) + "\n");
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.4g,%llu,%lld,%.9g,%s", p, static_cast<unsigned long long>(cfg.train_config().seed),
                  static_cast<long long>(r.steps), r.final_loss, r.crc.c_str());
    csv << buf;
    for (const auto& mode : base.eval.modes)
      for (const auto& c : cols) {
        csv << ',';
        const auto& m = report["modes"];
        if (m.contains(mode) && m[mode].contains(c) && !m[mode][c].is_null()) {
          std::snprintf(buf, sizeof buf, "%.9g", m[mode][c].get<double>());
          csv << buf;
        }
      }
    csv << '\n';
    std::fprintf(stderr, "p_split %.2f done in %.1fs\n", p, seconds_since(t0));
  }
  io::write_text(o / "ablate_psplit.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

Image<double> flipped_cfg(const Image<double>& c, const Image<double>& u, double w) {
  // Deliberately wrong guidance sign, used to prove the suite catches it.
  return cfg_combine(c, u, -w);
}

int cmd_oracle_check(const Common& common, const std::string& fault) {
  const ExperimentConfig cfg = load(common);
  CfgCombiner<double> combine = &cfg_combine<double>;
  if (fault == "cfg-sign") combine = &flipped_cfg;
  const auto results = oracle::run_oracle_suite(cfg.seed, default_thread_count(), combine);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.empty() ? "" : ": ",
                r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PathDiff desk-scale: unpaired dual-condition diffusion"};
  app.require_subcommand(1);
  Common common;
  std::string out, data, checkpoint, mode = "both", fault = "none";
  int n = 0;
  std::vector<double> values{0.2, 0.5, 0.8};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "experiment config (JSON); defaults apply to missing keys");
    sub->allow_extras();
    sub->footer("Any config key can be overridden as --section.key VALUE, e.g. --train.epochs 5; the root seed as --seed N");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the unpaired corpus and its 80:20 split");
  add_common(gen);
  gen->add_option("-o,--out", out, "output directory (default paths.data_dir)");
  auto* tr = app.add_subcommand("train", "joint training on the unpaired halves");
  add_common(tr);
  tr->add_option("-d,--data", data, "corpus directory (default paths.data_dir)");
  tr->add_option("-o,--out", out, "run directory (default paths.run_dir)");
  auto* sm = app.add_subcommand("sample", "generate an image grid for one conditioning mode");
  add_common(sm);
  sm->add_option("-k,--checkpoint", checkpoint, "checkpoint header (default <run_dir>/checkpoint.json)");
  sm->add_option("-m,--mode", mode, "text, mask, both, uncond, silver or random-pair")
      ->check(CLI::IsMember({"text", "mask", "both", "uncond", "silver", "random-pair"}));
  sm->add_option("-d,--data", data, "corpus directory (default paths.data_dir)");
  sm->add_option("-o,--out", out, "output directory (default <run_dir>/samples)");
  sm->add_option("-n,--count", n, "number of samples (default eval.num_samples)");
  auto* ev = app.add_subcommand("eval", "toy-FD, toy-KID, FS1, FS2 and alignment per mode");
  add_common(ev);
  ev->add_option("-k,--checkpoint", checkpoint, "checkpoint header (default <run_dir>/checkpoint.json)");
  ev->add_option("-d,--data", data, "corpus directory (default paths.data_dir)");
  ev->add_option("-o,--out", out, "report path (default <run_dir>/report.json)");
  auto* ab = app.add_subcommand("ablate-psplit", "train and evaluate once per p_split value");
  add_common(ab);
  ab->add_option("-d,--data", data, "corpus directory (default paths.data_dir)");
  ab->add_option("-o,--out", out, "output directory (default <run_dir>/ablate_psplit)");
  ab->add_option("--values", values, "p_split values")->delimiter(',');
  auto* oc = app.add_subcommand("oracle-check", "closed-form oracle suite; nonzero exit on any failure");
  add_common(oc);
  oc->add_option("--inject-fault", fault, "deliberately break a component")->check(CLI::IsMember({"none", "cfg-sign"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  try {
    for (auto* sub : app.get_subcommands()) common.extras = sub->remaining();
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (tr->parsed()) return cmd_train(common, data, out);
    if (sm->parsed()) return cmd_sample(common, checkpoint, mode, data, out, n);
    if (ev->parsed()) return cmd_eval(common, checkpoint, data, out);
    if (ab->parsed()) return cmd_ablate(common, data, out, values);
    if (oc->parsed()) return cmd_oracle_check(common, fault);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation failure: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}
