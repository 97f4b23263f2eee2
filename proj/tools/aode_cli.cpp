// aode: train, evaluate and inspect masked neural-ODE autoencoders.
//
// Exit codes: 0 success, 1 configuration / input / format error,
// 2 numerical failure, 3 a hard diagnostic check failed.

#include <CLI11.hpp>
#include <json.hpp>

#include <malloc.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "aode/aode.hpp"
#include "aode/run_config.hpp"

namespace fs = std::filesystem;
using namespace aode;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitCheck = 3;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string checks = "grad,lip";
  std::string kind;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 0;
  bool strict = false;
  bool csv = false;
  double split = 1.0;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw Error("cannot write '" + p.string() + "'");
  return os;
}

// Leading `split` fraction is the training part; eval/diagnose on a split
// checkpoint use the remainder.
Dataset apply_split(const Dataset& d, double split, bool held_out) {
  if (!(split > 0.0 && split <= 1.0)) throw ConfigError("--split must lie in (0, 1]");
  if (split == 1.0) return d;
  const auto n_train = static_cast<std::size_t>(std::floor(split * static_cast<double>(d.size())));
  if (n_train == 0 || n_train == d.size()) throw ConfigError("--split leaves an empty part");
  return held_out ? d.slice(n_train, d.size() - n_train) : d.slice(0, n_train);
}

// The stored configuration, minus the train/held-out split fraction.
RunConfig config_from_checkpoint(const Checkpoint& c, double* split = nullptr) {
  try {
    Json j = Json::parse(c.provenance.config_text);
    if (split) *split = j.contains("split") ? j["split"].get<double>() : 1.0;
    j.erase("split");
    return parse_run_config(j);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint carries an unreadable configuration: ") + e.what());
  }
}

Dataset dataset_for(const RunConfig& rc, const std::string& data_path) {
  if (data_path.empty()) return make_dataset(rc);
  const auto kind = rc.classification() ? Dataset::Kind::classification : Dataset::Kind::reconstruction;
  return load_dataset(data_path, kind);
}

int cmd_train(const Options& o) {
  if (o.config.empty()) throw ConfigError("train needs --config");
  if (o.out.empty()) throw ConfigError("train needs --out");
  Json j = read_json_file(o.config);
  if (o.seed_given && j.is_object()) j["seed"] = o.seed;
  const fs::path cfg_path(o.config);
  RunConfig rc = parse_run_config(j, cfg_path.has_parent_path() ? cfg_path.parent_path().string() : ".");
  // Provenance keeps absolute data paths so the checkpoint can regenerate its data.
  if (!rc.data.images.empty()) j["data"]["images"] = fs::absolute(resolve_path(rc, rc.data.images)).string();
  if (!rc.data.labels.empty()) j["data"]["labels"] = fs::absolute(resolve_path(rc, rc.data.labels)).string();
  if (o.split != 1.0) j["split"] = o.split;

  const Network net = build_network(rc);
  const Dataset data = apply_split(dataset_for(rc, o.data), o.split, false);
  const ParticleBatch batch = embed(data, net.schedule);
  const LossSpec spec = LossSpec::squared_active(net.schedule);
  const TrainerConfig tc = trainer_config(rc);

  const fs::path out(o.out);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);

  std::vector<HessianRecord> hessian;
  StepObserver observer;
  if (rc.diagnostics.hessian_every > 0) {
    const HessianProbe probe =
        rc.diagnostics.hessian_probe == "dense_fd" ? HessianProbe::dense_fd : HessianProbe::power_iteration;
    observer = [&](std::size_t k, const ControlParams& th) {
      if (k % rc.diagnostics.hessian_every != 0 && k != tc.n_outer) return;
      hessian.push_back({k, hessian_extreme_eigs(net, th, batch, spec, tc.lambda, probe, rc.diagnostics.hessian_tol)});
    };
  }

  const TrainResult res = train(net, batch, spec, tc, observer);

  const std::string text = j.dump(2);
  Checkpoint ck{net, tc.lambda, res.theta, {rc.seed, config_hash(text), text}};
  save_checkpoint(out.string(), ck);
  {
    auto os = open_out(dir / "history.csv");
    res.history.write_csv(os);
  }
  if (!hessian.empty()) {
    auto os = open_out(dir / "hessian.csv");
    write_hessian_csv(os, hessian);
  }
  const HistoryRow& last = res.history.rows.back();
  std::cerr << "trained " << last.iter << " steps: cost " << res.history.rows.front().cost << " -> " << last.cost
            << " (data " << last.data_term << ")\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  double split = 1.0;
  const RunConfig rc = config_from_checkpoint(ck, &split);
  Dataset data = dataset_for(rc, o.data);
  if (o.data.empty() && split != 1.0) data = apply_split(data, split, true);
  const ParticleBatch batch = embed(data, ck.net.schedule);
  const Metrics m = evaluate(ck.net, ck.theta, batch, LossSpec::squared_active(ck.net.schedule), rc.classification());
  std::cout.precision(10);
  std::cout << "n,data_term,mse,accuracy\n"
            << batch.size() << ',' << m.data_term << ',' << m.mse << ',';
  if (std::isnan(m.accuracy)) std::cout << "nan";
  else std::cout << m.accuracy;
  std::cout << '\n';
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_diagnose(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const RunConfig rc = config_from_checkpoint(ck);
  const DiagnosticsConfig& dc = rc.diagnostics;
  const Network& net = ck.net;
  const Dataset data = dataset_for(rc, o.data);
  const ParticleBatch batch = embed(data, net.schedule);
  const LossSpec spec = LossSpec::squared_active(net.schedule);

  const fs::path ckpt(o.checkpoint);
  const fs::path dir = !o.out.empty() ? fs::path(o.out) : (ckpt.has_parent_path() ? ckpt.parent_path() : ".");
  fs::create_directories(dir);

  auto head = [&](std::size_t n) {
    const auto k = static_cast<Eigen::Index>(std::min<std::size_t>(n, batch.size()));
    return ParticleBatch{batch.inputs.leftCols(k), batch.targets.leftCols(k)};
  };

  bool failed = false;
  std::ostringstream summary;
  summary.precision(10);
  for (const std::string& check : split_list(o.checks)) {
    if (check == "grad") {
      // Full sweep for small models, a seeded coordinate sample otherwise.
      const ParticleBatch b = head(dc.grad_particles);
      const ControlParams g = control_gradient(net, ck.theta, b, spec, ck.lambda);
      const ParameterIndex index(net.schedule);
      std::vector<std::size_t> coords;
      if (index.size() <= dc.grad_max_coords) {
        for (std::size_t i = 0; i < index.size(); ++i) coords.push_back(i);
      } else {
        for (std::size_t i = 0; i < dc.grad_max_coords; ++i)
          coords.push_back(rng::hash(dc.center_seed, 0x6752, i) % index.size());
      }
      ControlParams fd = ControlParams::zeros(net), ad = ControlParams::zeros(net), probe = ck.theta;
      for (std::size_t i : coords) {
        index.ref(fd, i) = finite_diff_partial(net, probe, b, spec, ck.lambda, index, i, dc.grad_h);
        index.ref(ad, i) = index.get(g, i);
      }
      const double err = max_relative_error(ad, fd, net.schedule);
      auto os = open_out(dir / "grad.csv");
      os.precision(17);
      os << "max_rel_err,tolerance,h,coords\n" << err << ',' << dc.grad_tol << ',' << dc.grad_h << ','
         << coords.size() << '\n';
      summary << "grad_check_max_rel_err=" << err << '\n';
      if (!(err <= dc.grad_tol)) {
        std::cerr << "gradient check failed: max relative error " << err << " > " << dc.grad_tol << '\n';
        failed = true;
      }
    } else if (check == "lip") {
      const DeltaProfile p = lipschitz_profile(net, ck.theta, batch.inputs);
      auto os = open_out(dir / "delta.csv");
      write_delta_csv(os, p);
      std::size_t flagged = 0;
      for (bool f : p.flagged) flagged += f ? 1 : 0;
      summary << "delta_flagged_nodes=" << flagged << '\n';
      if (flagged > 0 && o.strict) {
        std::cerr << flagged << " nodes have delta < dt\n";
        failed = true;
      }
    } else if (check == "hessian") {
      const HessianProbe probe = dc.hessian_probe == "dense_fd" ? HessianProbe::dense_fd : HessianProbe::power_iteration;
      const HessianEigs e = hessian_extreme_eigs(net, ck.theta, batch, spec, ck.lambda, probe, dc.hessian_tol);
      const std::size_t iter = rc.trainer.n_outer;
      auto os = open_out(dir / "hessian.csv");
      write_hessian_csv(os, {{iter, e}});
      summary << "hessian_lambda_min=" << e.min << "\nhessian_lambda_max=" << e.max << '\n';
    } else if (check == "entropy") {
      const Trajectory tr = forward_flow(net, ck.theta, batch.inputs);
      const double eps = dc.epsilon > 0.0 ? dc.epsilon : default_epsilon(batch.inputs);
      const auto h = shannon_entropy_profile(tr.states, eps);
      const auto e = cluster_entropy_profile(tr.states, eps, std::min(dc.centers, batch.size()), dc.center_seed);
      auto os = open_out(dir / "entropy.csv");
      write_entropy_csv(os, h, e);
      summary << "entropy_epsilon=" << eps << "\nentropy_centers=" << std::min(dc.centers, batch.size()) << '\n';
    } else if (check == "latent") {
      const std::size_t node = bottleneck_node(net.schedule);
      const LatentReport rep = latent_sparsity_report(net, ck.theta, batch.inputs, data.labels, node, dc.zero_tol);
      auto os = open_out(dir / "latent.csv");
      os.precision(17);
      os << "label";
      for (int k : rep.active) os << ",z" << k;
      os << '\n';
      for (const auto& [label, mean] : rep.class_means) {
        os << label;
        for (Eigen::Index k = 0; k < mean.size(); ++k) os << ',' << mean(k);
        os << '\n';
      }
      summary << "latent_node=" << node << "\nlatent_width=" << rep.active.size()
              << "\nlatent_support_size=" << rep.modal_support.size() << "\nlatent_consistency=" << rep.consistency
              << '\n';
    } else if (check == "w1") {
      const ParticleBatch b = head(dc.w1_particles);
      const Trajectory tr = forward_flow(net, ck.theta, b.inputs);
      const IndexSet& out = net.schedule.output_set();
      Eigen::MatrixXd x(static_cast<Eigen::Index>(out.size()), b.inputs.cols());
      Eigen::MatrixXd y(x.rows(), x.cols()), x0(x.rows(), x.cols());
      for (std::size_t k = 0; k < out.size(); ++k) {
        x.row(static_cast<Eigen::Index>(k)) = tr.final_states().row(out[k]);
        y.row(static_cast<Eigen::Index>(k)) = b.targets.row(out[k]);
        x0.row(static_cast<Eigen::Index>(k)) = b.inputs.row(out[k]);
      }
      std::vector<W1Record> rows{{"output_vs_target", b.size(), wasserstein1_exact(x, y)},
                                 {"input_vs_target", b.size(), wasserstein1_exact(x0, y)}};
      auto os = open_out(dir / "w1.csv");
      write_w1_csv(os, rows);
      summary << "w1_output_vs_target=" << rows[0].value << '\n';
    } else {
      throw ConfigError("unknown check '" + check + "' (expected grad, lip, hessian, entropy, latent, w1)");
    }
  }
  auto os = open_out(dir / "summary.txt");
  os << summary.str();
  std::cout << summary.str();
  return failed ? kExitCheck : kExitOk;
}

int cmd_gendata(const Options& o) {
  if (o.out.empty()) throw ConfigError("gendata needs --out");
  if (o.n == 0) throw ConfigError("gendata needs --n >= 1");
  Dataset d;
  if (o.kind == "classify2d") d = gen_gaussian_classification(o.n, o.seed);
  else if (o.kind == "parabola") d = gen_parabola(o.n, o.seed);
  else throw ConfigError("unknown dataset kind '" + o.kind + "' (expected classify2d or parabola)");
  save_dataset(o.out, d, o.csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked neural-ODE autoencoders trained by a shooting method"};
  app.require_subcommand(1);
  Options o;

  auto* train_cmd = app.add_subcommand("train", "Train a network from a configuration file");
  train_cmd->add_option("--config", o.config, "JSON run configuration")->required();
  train_cmd->add_option("--out", o.out, "Checkpoint to write; history.csv goes next to it")->required();
  train_cmd->add_option("--data", o.data, "Dataset file (binary or CSV) instead of the configured data");
  train_cmd->add_option("--split", o.split, "Train on this leading fraction of the data");

  auto* eval_cmd = app.add_subcommand("eval", "Print metrics of a checkpoint as a CSV row");
  eval_cmd->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", o.data, "Dataset file; default regenerates the training data");

  auto* diag_cmd = app.add_subcommand("diagnose", "Run diagnostics on a checkpoint");
  diag_cmd->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  diag_cmd->add_option("--data", o.data, "Dataset file; default regenerates the training data");
  diag_cmd->add_option("--checks", o.checks, "Comma list of grad,lip,hessian,entropy,latent,w1");
  diag_cmd->add_option("--out", o.out, "Output directory (default: checkpoint directory)");
  diag_cmd->add_flag("--strict", o.strict, "Fail when a node has delta < dt");

  auto* gen_cmd = app.add_subcommand("gendata", "Generate a synthetic dataset");
  gen_cmd->add_option("--kind", o.kind, "classify2d or parabola")->required();
  gen_cmd->add_option("--n", o.n, "Number of samples")->required();
  gen_cmd->add_option("--out", o.out, "Output file")->required();
  gen_cmd->add_flag("--csv", o.csv, "Write CSV instead of the binary container");

  for (auto* sub : {train_cmd, eval_cmd, diag_cmd, gen_cmd}) {
    sub->add_option("--seed", o.seed, "Run seed")->each([&](const std::string&) { o.seed_given = true; });
    sub->add_option("--threads", o.threads, "Worker thread cap (default: AODE_THREADS or all cores)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  // Large per-step matrices otherwise go through mmap/munmap on every call.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  try {
    if (o.threads > 0) set_max_threads(o.threads);
    if (train_cmd->parsed()) return cmd_train(o);
    if (eval_cmd->parsed()) return cmd_eval(o);
    if (diag_cmd->parsed()) return cmd_diagnose(o);
    if (gen_cmd->parsed()) return cmd_gendata(o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
