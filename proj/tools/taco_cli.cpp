// taco: generate phantoms, pretrain, evaluate, run the rigid-error sweep and
// export embeddings.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "taco/taco.hpp"

namespace fs = std::filesystem;
using namespace taco;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --seed, else TACO_SEED, else the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TACO_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("TACO_SEED is not an unsigned integer: '") + env + "'");
  }
  return fallback;
}

void require_dir(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_directory(path)) throw UsageError(flag + ": no such directory '" + path + "'");
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path + "'");
}

std::vector<InstanceSample> load_range(const fs::path& dir, const CohortInfo& info,
                                       std::uint64_t first, std::size_t count) {
  std::vector<InstanceSample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(read_instance(dir, info, first + i));
  return out;
}

std::vector<InstanceSample> load_holdout(const fs::path& dir, const CohortInfo& info) {
  if (info.holdout == 0) throw ConfigError("cohort has no held-out instances");
  return load_range(dir, info, info.train, info.holdout);
}

void print_resolved(const std::string& verb, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# " << verb << " resolved config\n";
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
  std::cout.flush();
}

std::vector<PerturbLevel> parse_levels(const std::string& s) {
  std::vector<PerturbLevel> out{PerturbLevel::clean};
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    const PerturbLevel l = parse_level(tok);
    if (l != PerturbLevel::clean) out.push_back(l);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const TrainConfig defaults;
  CLI::App app{"Topology-aware consistency pretraining on synthetic multi-modal phantoms"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every verb");

  // gen-data
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::size_t gen_instances = 8, gen_modalities = 3, gen_holdout = 4;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic cohort");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Cohort seed (falls back to TACO_SEED, then 7)");
  gen->add_option("--instances", gen_instances, "Training instances")->capture_default_str()->check(CLI::Range(2, 100000));
  gen->add_option("--holdout", gen_holdout, "Held-out instances for evaluation")->capture_default_str();
  gen->add_option("--modalities", gen_modalities, "Modalities per instance")->capture_default_str()->check(CLI::Range(2, 8));

  // pretrain
  std::string pt_data, pt_out, pt_config;
  std::optional<std::uint64_t> pt_seed;
  std::optional<std::size_t> pt_iters, pt_omega;
  std::optional<double> pt_delta;
  auto* pre = app.add_subcommand("pretrain", "Train the encoder/decoder on a cohort");
  pre->add_option("--data", pt_data, "Cohort directory from gen-data");
  pre->add_option("--out", pt_out, "Output directory for checkpoints and loss.csv");
  pre->add_option("--config", pt_config, "Config file of key = value lines");
  pre->add_option("--seed", pt_seed, "Training seed (falls back to TACO_SEED, then " + std::to_string(defaults.seed) + ")");
  pre->add_option("--iters", pt_iters, "Iterations")->default_str(std::to_string(defaults.iterations));
  pre->add_option("--omega", pt_omega, "Neighbourhood size")->default_str(std::to_string(defaults.omega));
  pre->add_option("--delta", pt_delta, "Triplet margin")->default_str(format_double(defaults.delta));

  // eval
  std::string ev_data, ev_ckpt, ev_report;
  std::optional<std::uint64_t> ev_seed;
  bool ev_foreground = false;
  std::size_t ev_null = 1000;
  auto* ev = app.add_subcommand("eval", "Alignment metrics and anatomy purity on held-out instances");
  ev->add_option("--data", ev_data, "Cohort directory");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file");
  ev->add_option("--report", ev_report, "JSON report path");
  ev->add_option("--seed", ev_seed, "Seed for k-means and the null band (falls back to TACO_SEED, then 7)");
  ev->add_flag("--foreground", ev_foreground, "Restrict alignment statistics to foreground tokens");
  ev->add_option("--null-trials", ev_null, "Monte-Carlo trials for the purity null band")->capture_default_str();

  // perturb-eval
  std::string pe_data, pe_ckpt, pe_report, pe_levels = "mild,moderate,strong", pe_format = "csv";
  std::optional<std::uint64_t> pe_seed;
  std::size_t pe_seeds = 5;
  auto* pe = app.add_subcommand("perturb-eval", "Rigid-error robustness sweep on held-out instances");
  pe->add_option("--data", pe_data, "Cohort directory");
  pe->add_option("--checkpoint", pe_ckpt, "Checkpoint file");
  pe->add_option("--levels", pe_levels, "Comma-separated levels; clean is always included")->capture_default_str();
  pe->add_option("--report", pe_report, "JSON report path; a CSV is written next to it");
  pe->add_option("--format", pe_format, "Table printed to stdout")->capture_default_str()->check(CLI::IsMember({"csv", "json"}));
  pe->add_option("--seed", pe_seed, "Perturbation seed (falls back to TACO_SEED, then 7)");
  pe->add_option("--trials", pe_seeds, "Perturbation draws per instance and level")->capture_default_str();

  // export-embeddings
  std::string ex_data, ex_ckpt, ex_out, ex_format = "csv";
  std::optional<std::uint64_t> ex_instance;
  auto* ex = app.add_subcommand("export-embeddings", "2-D PCA of one held-out instance's tokens");
  ex->add_option("--data", ex_data, "Cohort directory");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file");
  ex->add_option("--out", ex_out, "Output CSV path");
  ex->add_option("--format", ex_format, "Output format")->capture_default_str()->check(CLI::IsMember({"csv"}));
  ex->add_option("--instance", ex_instance, "Instance id (default: first held-out instance)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      const std::uint64_t seed = resolve_seed(gen_seed, 7);
      print_resolved("gen-data", {{"out", gen_out},
                                  {"seed", std::to_string(seed)},
                                  {"instances", std::to_string(gen_instances)},
                                  {"holdout", std::to_string(gen_holdout)},
                                  {"modalities", std::to_string(gen_modalities)}});
      const AnatomyTemplate tmpl = AnatomyTemplate::standard();
      SynthConfig sc;
      sc.modalities = gen_modalities;
      const auto cohort = generate_cohort(tmpl, sc, seed, 0, gen_instances + gen_holdout);
      CohortInfo info{gen_instances, gen_holdout, gen_modalities, tmpl.label_count(), sc.volume_shape, seed};
      write_cohort(gen_out, info, cohort);
      std::cout << "wrote " << cohort.size() << " instances to " << gen_out << "\n";
    } else if (*pre) {
      TrainConfig c;
      if (!pt_config.empty()) {
        require_file(pt_config, "--config");
        apply_config(c, read_config_file(pt_config));
      }
      const bool seed_in_file = !pt_config.empty() && read_config_file(pt_config).count("seed");
      if (pt_seed || !seed_in_file) c.seed = resolve_seed(pt_seed, c.seed);
      if (pt_iters) c.iterations = *pt_iters;
      if (pt_omega) c.omega = *pt_omega;
      if (pt_delta) c.delta = *pt_delta;
      if (!pt_data.empty()) c.data = pt_data;
      if (!pt_out.empty()) c.out = pt_out;
      require_dir(c.data, "--data");
      if (c.out.empty()) throw UsageError("--out is required");
      try {
        c.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      std::cout << "# pretrain resolved config\n" << describe(c);
      const CohortInfo info = read_cohort_info(c.data);
      const auto train_set = load_range(c.data, info, 0, info.train);
      const std::size_t every = std::max<std::size_t>(1, c.iterations / 10);
      TrainHooks hooks;
      hooks.warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
      hooks.on_step = [every](const StepLog& s) {
        if (s.step % every == 0)
          std::cout << "step " << s.step << " l_uni " << format_double(s.loss.l_uni) << " l_intra "
                    << format_double(s.loss.l_intra) << " l_inter " << format_double(s.loss.l_inter)
                    << " l_total " << format_double(s.loss.l_total) << "\n";
      };
      const TrainResult r = train(c, train_set, hooks);
      std::cout << "wrote " << (fs::path(c.out) / "final.ckpt").string() << " ("
                << r.checkpoint.params.parameter_count() << " parameters, step " << r.checkpoint.step
                << ")\n";
    } else if (*ev) {
      require_dir(ev_data, "--data");
      require_file(ev_ckpt, "--checkpoint");
      const std::uint64_t seed = resolve_seed(ev_seed, 7);
      print_resolved("eval", {{"data", ev_data},
                              {"checkpoint", ev_ckpt},
                              {"report", ev_report},
                              {"seed", std::to_string(seed)},
                              {"foreground", ev_foreground ? "1" : "0"},
                              {"null_trials", std::to_string(ev_null)}});
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const CohortInfo info = read_cohort_info(ev_data);
      EvalOptions opt;
      opt.seed = seed;
      opt.null_trials = ev_null;
      opt.foreground_only = ev_foreground;
      const EvalReport rep = evaluate(ck.params, ck.grid, load_holdout(ev_data, info), opt);
      const std::string json = to_json(rep).dump(2) + "\n";
      if (!ev_report.empty()) write_bytes(ev_report, json);
      const auto& s = rep.summary;
      std::cout << "top1_retrieval " << format_double(s.top1_retrieval.mean) << " +- "
                << format_double(s.top1_retrieval.std) << "\n"
                << "neg_pos_gap " << format_double(s.neg_pos_gap.mean) << "\n"
                << "pairwise_rank_acc " << format_double(s.pairwise_rank_acc.mean) << "\n"
                << "mnn_selected_ratio " << format_double(s.mnn_selected_ratio.mean) << "\n"
                << "anatomy_cluster_purity " << format_double(rep.purity) << "\n";
    } else if (*pe) {
      require_dir(pe_data, "--data");
      require_file(pe_ckpt, "--checkpoint");
      const std::uint64_t seed = resolve_seed(pe_seed, 7);
      RobustnessOptions opt;
      try {
        opt.levels = parse_levels(pe_levels);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      opt.seed = seed;
      opt.seeds = pe_seeds;
      print_resolved("perturb-eval", {{"data", pe_data},
                                      {"checkpoint", pe_ckpt},
                                      {"levels", pe_levels},
                                      {"report", pe_report},
                                      {"format", pe_format},
                                      {"seed", std::to_string(seed)},
                                      {"trials", std::to_string(pe_seeds)}});
      const Checkpoint ck = load_checkpoint(pe_ckpt);
      const CohortInfo info = read_cohort_info(pe_data);
      const auto rows = robustness_sweep(ck.params, ck.grid, load_holdout(pe_data, info), opt);
      nlohmann::ordered_json j = nlohmann::ordered_json::array();
      for (const auto& r : rows) j.push_back(to_json(r));
      const std::string json = j.dump(2) + "\n";
      const std::string csv = robustness_csv(rows);
      if (!pe_report.empty()) {
        write_bytes(pe_report, json);
        write_bytes(fs::path(pe_report).replace_extension(".csv"), csv);
      }
      std::cout << (pe_format == "json" ? json : csv);
    } else if (*ex) {
      require_dir(ex_data, "--data");
      require_file(ex_ckpt, "--checkpoint");
      if (ex_out.empty()) throw UsageError("--out is required");
      const CohortInfo info = read_cohort_info(ex_data);
      const std::uint64_t id = ex_instance.value_or(info.train);
      if (id >= info.train + info.holdout) throw UsageError("--instance: no such instance");
      print_resolved("export-embeddings", {{"data", ex_data},
                                           {"checkpoint", ex_ckpt},
                                           {"out", ex_out},
                                           {"format", ex_format},
                                           {"instance", std::to_string(id)}});
      const Checkpoint ck = load_checkpoint(ex_ckpt);
      const InstanceSample s = read_instance(ex_data, info, id);
      const auto labels = token_region_labels(s.labels, ck.grid);
      const auto names = modality_names(s.modalities.size());
      const std::size_t k = ck.grid.token_count();
      std::vector<double> rows;
      for (const Volume& v : s.modalities) {
        const Array z = encode(ck.params, v, ck.grid);
        rows.insert(rows.end(), z.data.begin(), z.data.end());
      }
      const Array all({k * s.modalities.size(), ck.params.config.feature_dim}, std::move(rows));
      const PcaResult pca = pca_project(all, 2);
      std::vector<EmbeddingRow> out;
      for (std::size_t m = 0; m < s.modalities.size(); ++m)
        for (std::size_t t = 0; t < k; ++t)
          out.push_back({t, labels[t], names[m], pca.coords(m * k + t, 0), pca.coords(m * k + t, 1)});
      write_bytes(ex_out, embedding_csv(out));
      std::cout << "wrote " << out.size() << " rows to " << ex_out << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: malformed field '" << e.field() << "': " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
