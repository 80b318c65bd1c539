// casceq command-line driver. Exit codes: 0 success, 2 input error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "casceq/agreement.hpp"
#include "casceq/data_model.hpp"
#include "casceq/erasure.hpp"
#include "casceq/error.hpp"
#include "casceq/hidden_states.hpp"
#include "casceq/lens.hpp"
#include "casceq/probes.hpp"
#include "casceq/report.hpp"
#include "casceq/signal.hpp"
#include "casceq/tensor_container.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace casceq;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::string out_dir;
  std::string format = "json";
  unsigned threads = 1;
};

void emit(const json& doc, const std::string& out) {
  const std::string text = doc.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out, std::ios::binary);
  f << text;
  if (!f) throw InputError("cannot write " + out);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_layers(const std::string& s, const HiddenStateSet& set) {
  if (s.empty()) return set.layers();
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw InputError("bad layer index '" + item + "'");
    }
  }
  return out;
}

HiddenStateSet load_dump(const std::string& path) {
  return HiddenStateSet::from_container(read_tensor_container(path));
}

// ---- behavioral commands -------------------------------------------------------

struct PairArgs {
  std::string a, b, task, labels, metric = "kappa";
  double level = 0.95;
};

void add_pair_options(CLI::App* cmd, PairArgs& args) {
  cmd->add_option("--a", args.a, "prediction log of system A")->required();
  cmd->add_option("--b", args.b, "prediction log of system B")->required();
  cmd->add_option("--labels", args.labels, "comma-separated label space")->required();
  cmd->add_option("--task", args.task, "task id expected in the logs (default: first record of --a)");
}

// task_id of the first non-blank line, or "" when there is none.
std::string first_task_id(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open prediction log: " + path);
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return json::parse(line).at("task").get<std::string>();
    } catch (const json::exception& e) {
      throw InputError(path + ":1: " + e.what());
    }
  }
  return "";
}

AlignResult load_pair(const PairArgs& args) {
  const std::string task = args.task.empty() ? first_task_id(args.a) : args.task;
  const LabelSpace space(task, split_list(args.labels));
  const PredictionLog a = load_prediction_log(args.a, space);
  const PredictionLog b = load_prediction_log(args.b, space);
  AlignResult r = align_logs(a.records, b.records, space);
  return r;
}

json alignment_json(const AlignResult& r) {
  return {{"n", r.paired.n()}, {"dropped_a", r.dropped_a}, {"dropped_b", r.dropped_b}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"casceq: agreement statistics, probing, logit lens and concept erasure"};
  app.require_subcommand(1);
  // Global options are also accepted after a subcommand.
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.add_option("--resamples", g.resamples, "bootstrap resamples")->capture_default_str();
  app.add_option("--alpha", g.alpha, "FDR level")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "output directory for multi-file outputs");
  app.add_option("--format", g.format, "report format: csv|json|markdown|all")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str();

  std::function<void()> run;

  // agree
  PairArgs agree_args;
  std::string agree_out;
  auto* agree = app.add_subcommand("agree", "Cohen's kappa with a bootstrap interval");
  add_pair_options(agree, agree_args);
  agree->add_option("--metric", agree_args.metric, "bootstrap metric")->capture_default_str();
  agree->add_option("--level", agree_args.level, "interval level")->capture_default_str();
  agree->add_option("--out", agree_out, "output JSON (stdout by default)");
  agree->callback([&] {
    run = [&] {
      const AlignResult r = load_pair(agree_args);
      KappaResult k = cohen_kappa(r.paired);
      const Metric metric = parse_metric(agree_args.metric);
      json doc = {{"alignment", alignment_json(r)}};
      if (r.paired.n() >= 2 && g.resamples > 0) {
        const Interval ci = bootstrap_ci(r.paired, {metric, g.resamples, g.seed, agree_args.level, g.threads});
        if (metric == Metric::Kappa) {
          k.ci_low = ci.low;
          k.ci_high = ci.high;
        }
        doc["bootstrap"] = {{"metric", metric_name(metric)}, {"low", ci.low}, {"high", ci.high},
                            {"level", agree_args.level}, {"resamples", g.resamples}, {"seed", g.seed}};
      }
      doc["kappa"] = to_json(k);
      emit(doc, agree_out);
    };
  });

  // overlap
  PairArgs overlap_args;
  std::string overlap_out;
  auto* overlap = app.add_subcommand("overlap", "conditional error overlap");
  add_pair_options(overlap, overlap_args);
  overlap->add_option("--out", overlap_out, "output JSON");
  overlap->callback([&] {
    run = [&] {
      const AlignResult r = load_pair(overlap_args);
      emit({{"alignment", alignment_json(r)}, {"overlap", to_json(conditional_error_overlap(r.paired))}}, overlap_out);
    };
  });

  // mcnemar
  PairArgs mcnemar_args;
  std::string mcnemar_out;
  auto* mcn = app.add_subcommand("mcnemar", "McNemar test on discordant pairs");
  add_pair_options(mcn, mcnemar_args);
  mcn->add_option("--out", mcnemar_out, "output JSON");
  mcn->callback([&] {
    run = [&] {
      const AlignResult r = load_pair(mcnemar_args);
      emit({{"alignment", alignment_json(r)}, {"mcnemar", to_json(mcnemar(r.paired))}}, mcnemar_out);
    };
  });

  // fdr
  std::string fdr_p, fdr_file, fdr_out;
  auto* fdr = app.add_subcommand("fdr", "Benjamini-Hochberg adjustment");
  auto* fdr_p_opt = fdr->add_option("--p", fdr_p, "comma-separated p-values");
  fdr->add_option("--file", fdr_file, "file with one p-value per line")->excludes(fdr_p_opt);
  fdr->add_option("--out", fdr_out, "output JSON");
  fdr->callback([&] {
    run = [&] {
      std::vector<double> p;
      auto parse = [&](const std::string& s) {
        try {
          std::size_t used = 0;
          p.push_back(std::stod(s, &used));
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          throw InputError("bad p-value '" + s + "'");
        }
      };
      if (!fdr_file.empty()) {
        std::ifstream in(fdr_file);
        if (!in) throw InputError("cannot open " + fdr_file);
        for (std::string line; std::getline(in, line);) {
          if (line.find_first_not_of(" \t\r") != std::string::npos) parse(line.substr(0, line.find_last_not_of(" \t\r") + 1));
        }
      } else {
        for (const auto& s : split_list(fdr_p)) parse(s);
      }
      if (p.empty()) throw InputError("no p-values given");
      emit(to_json(bh_fdr(p, g.alpha)), fdr_out);
    };
  });

  // mix-noise
  std::string mix_signal, mix_noise, mix_out, mix_manifest;
  double mix_snr = 0.0;
  auto* mix = app.add_subcommand("mix-noise", "mix noise into speech at a target SNR");
  mix->add_option("--signal", mix_signal, "speech WAV");
  mix->add_option("--noise", mix_noise, "noise WAV");
  mix->add_option("--snr-db", mix_snr, "target SNR in dB");
  mix->add_option("--out", mix_out, "output WAV");
  mix->add_option("--manifest", mix_manifest, "batch JSON: [{signal, noise, snr_db, out, seed?}]");
  mix->callback([&] {
    run = [&] {
      auto one = [&](const fs::path& s, const fs::path& n, double snr, std::uint64_t seed, const fs::path& out) {
        const MixResult r = mix_at_snr(read_wav(s), read_wav(n), snr, seed);
        write_wav(r.mixture, out);
        json meta = r.metadata();
        meta["signal"] = s.generic_string();
        meta["noise"] = n.generic_string();
        meta["out"] = out.generic_string();
        meta["seed"] = seed;
        return meta;
      };
      if (!mix_manifest.empty()) {
        std::ifstream in(mix_manifest);
        if (!in) throw InputError("cannot open " + mix_manifest);
        json jobs;
        try {
          jobs = json::parse(in);
        } catch (const json::exception& e) {
          throw InputError(mix_manifest + ": " + e.what());
        }
        const fs::path base = fs::path(mix_manifest).parent_path();
        auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
        json results = json::array();
        try {
          for (const auto& job : jobs) {
            results.push_back(one(resolve(job.at("signal")), resolve(job.at("noise")), job.at("snr_db").get<double>(),
                                  job.value("seed", g.seed), resolve(job.at("out"))));
          }
        } catch (const json::exception& e) {
          throw InputError(mix_manifest + ": " + e.what());
        }
        emit(results, g.out_dir.empty() ? "" : (fs::path(g.out_dir) / "mix_noise.json").string());
        return;
      }
      if (mix_signal.empty() || mix_noise.empty() || mix_out.empty()) {
        throw InputError("mix-noise needs --signal, --noise, --snr-db and --out (or --manifest)");
      }
      emit(one(mix_signal, mix_noise, mix_snr, g.seed, mix_out), "");
    };
  });

  // probe
  auto* probe = app.add_subcommand("probe", "layer-wise probes");
  probe->require_subcommand(1);
  struct {
    std::string dump, target = "ctc", out, lambda;
    int layer = 0;
    double split = 0.8;
    CtcTrainOptions ctc;
  } pf;
  auto* probe_fit = probe->add_subcommand("fit", "fit a probe at one layer");
  probe_fit->add_option("--dump", pf.dump, "hidden-state dump")->required();
  probe_fit->add_option("--layer", pf.layer, "layer index")->required();
  probe_fit->add_option("--target", pf.target, "energy|pitch|boc|ctc")->capture_default_str();
  probe_fit->add_option("--split", pf.split, "train fraction")->capture_default_str();
  probe_fit->add_option("--lambda", pf.lambda, "ridge lambda (default scale-aware)");
  probe_fit->add_option("--epochs", pf.ctc.epochs, "CTC epochs")->capture_default_str();
  probe_fit->add_option("--lr", pf.ctc.learning_rate, "CTC learning rate")->capture_default_str();
  probe_fit->add_option("--batch", pf.ctc.batch_size, "CTC batch size")->capture_default_str();
  probe_fit->add_option("--out", pf.out, "probe file (HSD1)");
  probe_fit->callback([&] {
    run = [&] {
      const HiddenStateSet set = load_dump(pf.dump);
      const ProbeKind kind = parse_probe_kind(pf.target);
      const SplitSpec split{pf.split, g.seed};
      json doc = {{"layer", pf.layer}, {"target", probe_kind_name(kind)}, {"seed", g.seed}};
      if (kind == ProbeKind::Ctc) {
        pf.ctc.seed = g.seed;
        const CtcProbe p = fit_ctc_probe(set, pf.layer, split, pf.ctc);
        doc["text_decodability"] = p.text_decodability;
        if (!pf.out.empty()) write_tensor_container(p.to_container(), pf.out);
      } else {
        std::optional<double> lambda;
        if (!pf.lambda.empty()) lambda = std::stod(pf.lambda);
        const ProbeData data = kind == ProbeKind::Boc ? boc_probe_data(set, pf.layer)
                                                      : acoustic_probe_data(set, pf.layer, kind);
        StoredRidgeProbe stored{fit_ridge_probe(data.x, data.y, lambda, data.groups, split), kind, pf.layer};
        doc["lambda"] = stored.probe.lambda;
        doc["r2_train"] = stored.probe.r2_train;
        doc["r2_test"] = std::isfinite(stored.probe.r2_test) ? json(stored.probe.r2_test) : json(nullptr);
        if (!pf.out.empty()) write_tensor_container(stored.to_container(), pf.out);
      }
      emit(doc, "");
    };
  });
  std::string pe_probe, pe_dump;
  auto* probe_eval = probe->add_subcommand("eval", "score a stored probe on a dump");
  probe_eval->add_option("--probe", pe_probe, "probe file")->required();
  probe_eval->add_option("--dump", pe_dump, "hidden-state dump")->required();
  probe_eval->callback([&] {
    run = [&] {
      const TensorContainer c = read_tensor_container(pe_probe);
      const HiddenStateSet set = load_dump(pe_dump);
      if (c.metadata().value("kind", "") == "ctc_probe") {
        const CtcProbe p = CtcProbe::from_container(c);
        emit({{"layer", p.layer}, {"target", "ctc"},
              {"text_decodability", evaluate_ctc_probe(p, set, p.layer, all_indices(set.size()))}}, "");
      } else {
        const StoredRidgeProbe s = StoredRidgeProbe::from_container(c);
        const double r2 = evaluate_ridge_probe(s, set);
        emit({{"layer", s.layer}, {"target", probe_kind_name(s.target)},
              {"r2", std::isfinite(r2) ? json(r2) : json(nullptr)}}, "");
      }
    };
  });
  struct {
    std::string dump, target, out;
    double split = 0.8;
    CtcTrainOptions ctc;
  } pc;
  auto* probe_curve_cmd = probe->add_subcommand("curve", "held-out score at every layer");
  probe_curve_cmd->add_option("--dump", pc.dump, "hidden-state dump")->required();
  probe_curve_cmd->add_option("--target", pc.target, "energy|pitch|boc|ctc")->required();
  probe_curve_cmd->add_option("--split", pc.split, "train fraction")->capture_default_str();
  probe_curve_cmd->add_option("--epochs", pc.ctc.epochs, "CTC epochs")->capture_default_str();
  probe_curve_cmd->add_option("--lr", pc.ctc.learning_rate, "CTC learning rate")->capture_default_str();
  probe_curve_cmd->add_option("--out", pc.out, "output JSON");
  probe_curve_cmd->callback([&] {
    run = [&] {
      ProbeCurveOptions opts;
      opts.split = {pc.split, g.seed};
      opts.ctc = pc.ctc;
      opts.ctc.seed = g.seed;
      opts.threads = g.threads;
      json doc = json::array();
      for (const auto& s : probe_curve(load_dump(pc.dump), parse_probe_kind(pc.target), opts)) doc.push_back(to_json(s));
      emit(doc, pc.out);
    };
  });
  std::string pa_dump, pa_wavs, pa_out;
  auto* probe_acoustics = probe->add_subcommand("acoustics", "attach energy/pitch targets from <wav-dir>/<id>.wav");
  probe_acoustics->add_option("--dump", pa_dump, "hidden-state dump")->required();
  probe_acoustics->add_option("--wav-dir", pa_wavs, "directory of utterance WAVs")->required();
  probe_acoustics->add_option("--out", pa_out, "output dump")->required();
  probe_acoustics->callback([&] {
    run = [&] {
      const HiddenStateSet set = load_dump(pa_dump);
      std::vector<UtteranceStates> utts = set.utterances();
      for (auto& u : utts) {
        const AcousticSeries a = acoustic_series(read_wav(fs::path(pa_wavs) / (u.id + ".wav")));
        MatrixF m(static_cast<Eigen::Index>(a.energy.size()), 2);
        for (std::size_t i = 0; i < a.energy.size(); ++i) {
          m(static_cast<Eigen::Index>(i), 0) = static_cast<float>(a.energy[i]);
          m(static_cast<Eigen::Index>(i), 1) = static_cast<float>(a.pitch[i]);
        }
        u.acoustic = std::move(m);
      }
      write_tensor_container(HiddenStateSet(std::move(utts)).to_container(), pa_out);
    };
  });

  // lens
  struct {
    std::string dump, weights, layers, positions = "audio", out;
    bool multiset = false;
    int decode_layer = 31;
  } ln;
  auto* lens = app.add_subcommand("lens", "logit-lens bag-of-tokens precision");
  lens->require_subcommand(0, 1);
  lens->fallthrough();
  lens->add_option("--dump", ln.dump, "hidden-state dump")->required();
  lens->add_option("--weights", ln.weights, "lens weights (HSD1)")->required();
  lens->add_option("--positions", ln.positions, "audio|all")->capture_default_str();
  lens->add_option("--out", ln.out, "output file");
  lens->add_option("--layers", ln.layers, "comma-separated layers (default: all)");
  lens->add_flag("--multiset", ln.multiset, "count duplicate decoded tokens");
  auto* lens_decode = lens->add_subcommand("decode", "emit {id, decoded_text} JSONL for one layer");
  lens_decode->add_option("--layer", ln.decode_layer, "layer")->capture_default_str();
  lens->callback([&] {
    run = [&] {
      const HiddenStateSet set = load_dump(ln.dump);
      const LensWeights w = LensWeights::from_container(read_tensor_container(ln.weights));
      LensOptions opts{parse_position_mode(ln.positions), ln.multiset, g.threads};
      if (lens_decode->parsed()) {
        const ReferenceSegmenter seg(w.vocab, w.boundary_marker);
        std::ostringstream lines;
        for (const auto& r : lens_layer(set, w, ln.decode_layer, seg, opts)) {
          lines << json{{"id", r.utterance_id}, {"decoded_text", lens_decode_text(r.top_tokens, w)}}.dump() << '\n';
        }
        if (ln.out.empty()) {
          std::cout << lines.str();
        } else {
          std::ofstream f(ln.out, std::ios::binary);
          f << lines.str();
          if (!f) throw InputError("cannot write " + ln.out);
        }
        return;
      }
      json doc = json::array();
      for (const auto& s : lens_curve(set, w, parse_layers(ln.layers, set), opts)) doc.push_back(to_json(s));
      emit({{"positions", ln.positions}, {"multiset", ln.multiset}, {"layers", doc}}, ln.out);
    };
  });

  // leace
  auto* leace = app.add_subcommand("leace", "concept erasure");
  leace->require_subcommand(1);
  struct {
    std::string dump, concept_name = "boc", out, layers, shrinkage, stack;
    bool soft = false;
    double split = 0.8;
    Eigen::Index d = 0, k = 0;
  } lc;
  auto concept_options = [&](const HiddenStateSet&, const json& info) {
    ConceptOptions o;
    o.soft_ctc = lc.soft;
    o.split = {lc.split, g.seed};
    o.ctc.seed = g.seed;
    if (info.contains("proxy_words")) {
      ProxyVocabulary v;
      v.words = info["proxy_words"].get<std::vector<std::string>>();
      v.classes = info.value("proxy_classes", Eigen::Index{159});
      o.proxy = v;
    }
    return o;
  };
  auto* leace_fit = leace->add_subcommand("fit", "fit one LEACE eraser per layer");
  leace_fit->add_option("--dump", lc.dump, "hidden-state dump")->required();
  leace_fit->add_option("--concept", lc.concept_name, "boc|proxy|ctc|acoustic")->capture_default_str();
  leace_fit->add_option("--shrinkage", lc.shrinkage, "covariance shrinkage (default scale-aware)");
  leace_fit->add_option("--layers", lc.layers, "comma-separated layers (default: all)");
  leace_fit->add_flag("--soft", lc.soft, "soft CTC concept labels");
  leace_fit->add_option("--out", lc.out, "eraser stack (HSD1)")->required();
  leace_fit->callback([&] {
    run = [&] {
      const HiddenStateSet set = load_dump(lc.dump);
      const ConceptKind kind = parse_concept_kind(lc.concept_name);
      json info = json::object();
      if (kind == ConceptKind::Proxy) {
        const ProxyVocabulary v = build_proxy_vocabulary(set);
        info = {{"proxy_words", v.words}, {"proxy_classes", v.classes}};
      }
      if (kind == ConceptKind::Ctc) info = {{"soft", lc.soft}};
      std::optional<double> shrink;
      if (!lc.shrinkage.empty()) shrink = std::stod(lc.shrinkage);
      EraserStack stack = build_stack(set, make_concept_builder(kind, concept_options(set, info)), shrink,
                                      parse_layers(lc.layers, set), g.threads);
      stack.concept_info = info;
      write_tensor_container(stack.to_container(), lc.out);
      json layers = json::array();
      for (const auto& [layer, e] : stack.erasers) {
        layers.push_back({{"layer", layer}, {"erased_rank", erased_rank(e)}, {"shrinkage", e.shrinkage}, {"n", e.n}});
      }
      emit({{"concept", concept_kind_name(kind)}, {"layers", layers}}, "");
    };
  });
  auto* leace_random = leace->add_subcommand("random", "random orthogonal eraser(s)");
  leace_random->add_option("--d", lc.d, "hidden width")->required();
  leace_random->add_option("--k", lc.k, "erased dimensionality")->required();
  leace_random->add_option("--layers", lc.layers, "comma-separated layers (default: 0)");
  leace_random->add_option("--out", lc.out, "eraser stack (HSD1); default <out-dir>/random_eraser.hsd");
  leace_random->callback([&] {
    run = [&] {
      std::vector<int> layers;
      for (const auto& s : split_list(lc.layers.empty() ? "0" : lc.layers)) layers.push_back(std::stoi(s));
      fs::path out = lc.out;
      if (out.empty()) {
        out = (g.out_dir.empty() ? fs::path(".") : fs::path(g.out_dir)) / "random_eraser.hsd";
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
      }
      write_tensor_container(random_stack(lc.d, lc.k, g.seed, layers).to_container(), out);
      emit({{"d", lc.d}, {"k", lc.k}, {"seed", g.seed}, {"layers", layers}, {"out", out.generic_string()}}, "");
    };
  });
  auto* leace_apply = leace->add_subcommand("apply", "apply a stack to a dump offline");
  leace_apply->add_option("--stack", lc.stack, "eraser stack")->required();
  leace_apply->add_option("--dump", lc.dump, "hidden-state dump")->required();
  leace_apply->add_option("--out", lc.out, "erased dump")->required();
  leace_apply->callback([&] {
    run = [&] {
      const EraserStack stack = EraserStack::from_container(read_tensor_container(lc.stack));
      write_tensor_container(apply_stack(stack, load_dump(lc.dump)).to_container(), lc.out);
    };
  });
  std::string verify_concept;
  auto* leace_verify = leace->add_subcommand("verify", "guardedness report on held-out data");
  leace_verify->add_option("--stack", lc.stack, "eraser stack")->required();
  leace_verify->add_option("--dump", lc.dump, "held-out dump")->required();
  leace_verify->add_option("--concept", verify_concept, "concept labels (default: the stack's)");
  leace_verify->add_option("--out", lc.out, "output JSON");
  leace_verify->callback([&] {
    run = [&] {
      const EraserStack stack = EraserStack::from_container(read_tensor_container(lc.stack));
      const HiddenStateSet set = load_dump(lc.dump);
      ConceptKind kind = verify_concept.empty() ? stack.erasers.begin()->second.kind : parse_concept_kind(verify_concept);
      if (kind == ConceptKind::Random || kind == ConceptKind::Custom) {
        throw InputError("stack has no concept labels; pass --concept");
      }
      lc.soft = stack.concept_info.value("soft", false);
      const ConceptBuilder builder = make_concept_builder(kind, concept_options(set, stack.concept_info));
      json layers = json::array();
      for (const auto& [layer, e] : stack.erasers) {
        json r = to_json(verify_guardedness(e, set.stacked_frames(layer, FrameScope::Audio), builder(set, layer),
                                            {0.8, g.seed, std::nullopt}));
        r["layer"] = layer;
        r["idempotence_error"] = idempotence_error(e);
        r["erased_rank"] = erased_rank(e);
        layers.push_back(std::move(r));
      }
      emit({{"concept", concept_kind_name(kind)}, {"layers", layers}}, lc.out);
    };
  });

  // report
  std::string report_manifest;
  std::vector<std::string> report_fixtures;
  auto* report = app.add_subcommand("report", "run a manifest and render the report");
  report->add_option("--manifest", report_manifest, "manifest JSON");
  report->add_option("--fixture", report_fixtures, "extra fixture JSON (repeatable)");
  report->callback([&] {
    run = [&] {
      ReportBundle bundle;
      if (!report_manifest.empty()) {
        bundle = run_manifest(load_manifest(report_manifest), {g.seed, g.resamples, g.alpha, g.threads});
      } else {
        bundle.seed = g.seed;
        bundle.resamples = g.resamples;
        bundle.alpha = g.alpha;
      }
      for (const auto& f : report_fixtures) merge_fixture_file(bundle, f);
      finalize(bundle);
      const fs::path out = g.out_dir.empty() ? fs::path("report") : fs::path(g.out_dir);
      std::vector<RenderFormat> formats;
      if (g.format == "all") {
        formats = {RenderFormat::Csv, RenderFormat::Json, RenderFormat::Markdown};
      } else {
        formats = {parse_render_format(g.format)};
      }
      json written = json::array();
      for (auto f : formats) {
        for (const auto& p : render(bundle, f, out)) written.push_back(p.generic_string());
      }
      emit({{"written", written}}, "");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run) run();
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
