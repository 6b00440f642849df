// reid: command-line front end for corpus evaluation, PCA subspace
// excision, gallery-only subspace selection, attribute probes and synthetic
// corpora. Every command writes into --out and prints one summary line.

#include "reid/reid.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Args {
  std::string corpus;
  std::string format;
  std::string out = ".";
  std::string measure = "cosine";
  bool templated = false;
  std::string fit_on;
  std::vector<double> far{1e-3};
  std::string ks = "1,20";
  std::string aux_gallery;
  std::string selection;
  bool leave_one_out = false;
  bool exclude_same_dataset = false;
  unsigned threads = 0;

  // probe
  std::string attribute;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  reid::ProbeConfig probe;

  // synth
  reid::SynthConfig synth;
  std::vector<std::string> attributes;
};

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = std::min(s.find(',', pos), s.size());
    const std::string_view tok(s.data() + pos, comma - pos);
    std::size_t k = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), k);
    if (tok.empty() || ec != std::errc{} || p != tok.data() + tok.size() || k == 0) {
      throw reid::ValidationError("--ks expects comma-separated positive integers, got '" + s + "'");
    }
    ks.push_back(k);
    pos = comma + 1;
  }
  return ks;
}

reid::AttributeSpec parse_attribute(const std::string& s) {
  // name:classes:effect[:image]
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto colon = s.find(':', pos);
    parts.push_back(s.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos));
    if (colon == std::string::npos) break;
    pos = colon + 1;
  }
  const auto bad = [&] {
    return reid::ValidationError("--attribute expects name:classes:effect[:image], got '" + s + "'");
  };
  if (parts.size() < 3 || parts.size() > 4) throw bad();
  reid::AttributeSpec a;
  a.name = parts[0];
  try {
    std::size_t used = 0;
    a.classes = std::stoul(parts[1], &used);
    if (used != parts[1].size()) throw bad();
    a.effect_norm = std::stod(parts[2], &used);
    if (used != parts[2].size()) throw bad();
  } catch (const std::logic_error&) {
    throw bad();
  }
  if (parts.size() == 4) {
    if (parts[3] != "image") throw bad();
    a.per_image = true;
  }
  return a;
}

reid::EmbeddingCorpus load(const std::string& path, const std::string& format) {
  const auto fmt = format.empty() ? reid::format_from_path(path) : reid::parse_format(format);
  return reid::load_corpus(path, fmt);
}

unsigned resolve_threads(unsigned t) { return t ? t : std::max(1u, std::thread::hardware_concurrency()); }

reid::EvalOptions eval_options(const Args& a) {
  reid::EvalOptions o;
  o.measure = reid::parse_measure(a.measure);
  o.templated = a.templated;
  o.ks = parse_ks(a.ks);
  o.far_targets = a.far;
  o.threads = resolve_threads(a.threads);
  o.exclude_same_dataset = a.exclude_same_dataset;
  for (double f : o.far_targets) {
    if (!(f > 0.0 && f < 1.0)) throw reid::ValidationError("--far must lie in (0, 1), got " + reid::format_double(f));
  }
  return o;
}

json eval_config(const reid::EvalOptions& o) {
  json j;
  j["measure"] = std::string(reid::to_string(o.measure));
  j["templated"] = o.templated;
  j["ks"] = o.ks;
  j["far_targets"] = o.far_targets;
  j["exclude_same_dataset"] = o.exclude_same_dataset;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw reid::IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path out_dir(const Args& a) {
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw reid::IoError("cannot create output directory '" + a.out + "': " + ec.message());
  return a.out;
}

void write_report(const fs::path& dir, const std::string& command, const json& config, const reid::EvalReport& r) {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["report"] = reid::to_json(r);
  write_json(dir / "report.json", j);
  write_text(dir / "report.csv", reid::to_csv(r));
}

std::string summary(const reid::EvalReport& r) {
  std::string s = "auc=" + reid::format_double(r.auc) + " map=" + reid::format_double(r.map);
  for (const auto& p : r.cmc) s += " rank" + std::to_string(p.k) + "=" + reid::format_double(p.accuracy);
  for (const auto& t : r.tar_at_far) s += " tar@" + reid::format_double(t.far_target) + "=" + reid::format_double(t.tar);
  return s;
}

/// Basis fitted on this corpus's gallery pooled with the gallery of --aux-gallery.
reid::PcaBasis combined_basis(const reid::EmbeddingCorpus& corpus, const Args& a, reid::FitOn fit_on) {
  const auto aux = load(a.aux_gallery, "");
  if (aux.dimension() != corpus.dimension()) throw reid::ValidationError("--aux-gallery dimension differs from the corpus");
  const auto merged = reid::concat({&corpus, &aux});
  return reid::fit_gallery_basis(reid::GalleryView(merged), fit_on);
}

json base_config(const Args& a, const std::string& command) {
  json j;
  j["command"] = command;
  j["corpus"] = a.corpus;
  if (!a.aux_gallery.empty()) j["aux_gallery"] = a.aux_gallery;
  return j;
}

bool basis_matches(const reid::PcaBasis& fitted, const reid::PcaBasis& stored) {
  if (fitted.rank() != stored.rank() || fitted.dimension() != stored.dimension()) return false;
  const auto close = [](double x, double y) { return std::abs(x - y) <= 1e-6 * std::max(1.0, std::abs(x)); };
  for (Eigen::Index j = 0; j < fitted.mean.size(); ++j) {
    if (!close(fitted.mean(j), stored.mean(j))) return false;
  }
  for (Eigen::Index i = 0; i < fitted.components.rows(); ++i) {
    for (Eigen::Index j = 0; j < fitted.components.cols(); ++j) {
      if (!close(fitted.components(i, j), stored.components(i, j))) return false;
    }
  }
  return true;
}

int cmd_eval(const Args& a, bool measure_given, bool templated_given) {
  const auto corpus = load(a.corpus, a.format);
  auto opt = eval_options(a);
  json cfg = base_config(a, "eval");
  reid::EvalReport report;
  if (a.selection.empty()) {
    report = reid::evaluate_corpus(corpus, opt);
  } else {
    if (templated_given && !a.templated) throw reid::ValidationError("--selection is always evaluated against templates; drop --no-templated");
    const fs::path sel_path = a.selection;
    nlohmann::json sj;
    try {
      sj = nlohmann::json::parse(reid::detail::read_file(sel_path));
    } catch (const nlohmann::json::exception& e) {
      throw reid::ValidationError("bad selection file: " + std::string(e.what()));
    }
    if (!sj.contains("selection") || !sj.contains("basis_file")) throw reid::ValidationError("bad selection file: missing fields");
    const auto stored = reid::read_pca_basis(sel_path.parent_path() / sj["basis_file"].get<std::string>());
    const std::string source = sj.value("basis_source", std::string{});
    reid::PcaBasis basis = stored;
    if (source == "gallery-templates") {
      // The stored basis is float32; refit in double precision and check it.
      auto refit = reid::fit_pca(reid::build_templates(reid::GalleryView(corpus)).vectors);
      if (!basis_matches(refit, stored)) {
        throw reid::ValidationError("selection basis does not match this corpus's gallery");
      }
      basis = std::move(refit);
    }
    const auto sel = reid::selection_from_json(sj["selection"], std::move(basis));
    if (measure_given && reid::parse_measure(a.measure) != sel.measure) {
      throw reid::ValidationError("--measure conflicts with the measure stored in the selection");
    }
    report = reid::apply_selection(sel, corpus, opt);
    opt.measure = sel.measure;
    opt.templated = true;
    cfg["selection"] = a.selection;
    cfg["k_star"] = sel.k_star;
  }
  cfg["eval"] = eval_config(opt);
  write_report(out_dir(a), "eval", cfg, report);
  std::cout << "eval " << (report.subspace_descriptor ? *report.subspace_descriptor : "") << " " << summary(report) << "\n";
  return 0;
}

int cmd_pca_eval(const Args& a) {
  const auto corpus = load(a.corpus, a.format);
  reid::PcaEvalOptions opt;
  opt.eval = eval_options(a);
  opt.fit_on = reid::parse_fit_on(a.fit_on.empty() ? "images" : a.fit_on);
  if (!a.aux_gallery.empty()) opt.basis = combined_basis(corpus, a, opt.fit_on);
  const auto basis = opt.basis ? *opt.basis : reid::fit_gallery_basis(reid::GalleryView(corpus), opt.fit_on);
  opt.basis = basis;
  const auto report = reid::pca_eval(corpus, opt);
  json cfg = base_config(a, "pca-eval");
  cfg["eval"] = eval_config(opt.eval);
  cfg["fit_on"] = std::string(reid::to_string(opt.fit_on));
  cfg["rank"] = basis.rank();
  cfg["sign_convention"] = reid::kSignConvention;
  const auto dir = out_dir(a);
  write_report(dir, "pca-eval", cfg, report);
  reid::write_pca_basis(basis, dir / "basis.emb");
  std::cout << "pca-eval rank=" << basis.rank() << " " << summary(report) << "\n";
  return 0;
}

int cmd_oracle_sweep(const Args& a) {
  const auto corpus = load(a.corpus, a.format);
  reid::SweepOptions opt;
  opt.eval = eval_options(a);
  opt.eval.templated = true;
  if (!a.aux_gallery.empty()) opt.basis = combined_basis(corpus, a, reid::FitOn::templates);
  const auto sweep = reid::oracle_sweep(corpus, opt);
  std::size_t best = 0;
  for (std::size_t k = 1; k < sweep.rows.size(); ++k) {
    if (sweep.rows[k].rank1 > sweep.rows[best].rank1) best = k;
  }
  json cfg = base_config(a, "oracle-sweep");
  auto ecfg = eval_config(opt.eval);
  ecfg.erase("ks");
  cfg["eval"] = ecfg;
  cfg["fit_on"] = "templates";
  cfg["rank"] = sweep.basis.rank();
  cfg["sign_convention"] = reid::kSignConvention;
  json j;
  j["command"] = "oracle-sweep";
  j["config"] = cfg;
  j["best_k"] = best;
  j["best_rank1"] = sweep.rows[best].rank1;
  j["rank1_at_k0"] = sweep.rows[0].rank1;
  auto rows = json::array();
  for (const auto& r : sweep.rows) {
    json row;
    row["k"] = r.k;
    row["rank1"] = r.rank1;
    row["map"] = r.map;
    auto tars = json::array();
    for (const auto& t : r.tar_at_far) tars.push_back({{"far_target", t.far_target}, {"tar", t.tar}});
    row["tar_at_far"] = tars;
    row["auc"] = r.auc;
    rows.push_back(row);
  }
  j["rows"] = rows;
  const auto dir = out_dir(a);
  write_text(dir / "sweep.csv", reid::sweep_csv(sweep));
  write_json(dir / "sweep.json", j);
  reid::write_pca_basis(sweep.basis, dir / "basis.emb");
  std::cout << "oracle-sweep rank=" << sweep.basis.rank() << " rank1@k=0=" << reid::format_double(sweep.rows[0].rank1)
            << " best_k=" << best << " rank1=" << reid::format_double(sweep.rows[best].rank1) << "\n";
  return 0;
}

int cmd_select(const Args& a) {
  const auto corpus = load(a.corpus, a.format);
  reid::SelectOptions opt;
  opt.measure = reid::parse_measure(a.measure);
  opt.leave_one_out = a.leave_one_out;
  opt.threads = resolve_threads(a.threads);
  if (!a.aux_gallery.empty()) opt.basis = combined_basis(corpus, a, reid::FitOn::templates);
  const auto sel = reid::select_subspace(reid::GalleryView(corpus), opt);

  const auto dir = out_dir(a);
  json cfg = base_config(a, "select");
  cfg["measure"] = std::string(reid::to_string(opt.measure));
  cfg["leave_one_out"] = opt.leave_one_out;
  cfg["fit_on"] = "templates";
  cfg["sign_convention"] = reid::kSignConvention;
  json j;
  j["command"] = "select";
  j["config"] = cfg;
  j["selection"] = reid::to_json(sel);
  j["basis_file"] = "basis.emb";
  j["basis_source"] = a.aux_gallery.empty() ? "gallery-templates" : "combined-gallery-templates";
  write_json(dir / "selection.json", j);
  reid::write_pca_basis(sel.basis, dir / "basis.emb");

  std::string tail;
  if (corpus.count(reid::Role::probe) > 0) {
    auto eopt = eval_options(a);
    const auto report = reid::apply_selection(sel, corpus, eopt);
    eopt.measure = sel.measure;
    eopt.templated = true;
    json rcfg = cfg;
    rcfg["eval"] = eval_config(eopt);
    rcfg["k_star"] = sel.k_star;
    write_report(dir, "select", rcfg, report);
    tail = " " + summary(report);
  }
  std::cout << "select k*=" << sel.k_star << " of rank " << sel.basis.rank()
            << " self_rank1=" << reid::format_double(sel.self_rank1.empty() ? 0.0 : sel.self_rank1[sel.k_star])
            << (sel.degenerate ? " (degenerate)" : "") << tail << "\n";
  return 0;
}

int cmd_probe(const Args& a) {
  const auto corpus = load(a.corpus, a.format);
  const auto run = reid::run_attribute_probe(corpus, a.attribute, a.fraction, a.seed, a.probe);
  json cfg = base_config(a, "probe");
  cfg["attribute"] = a.attribute;
  cfg["fraction"] = a.fraction;
  cfg["seed"] = a.seed;
  cfg["training"] = reid::to_json(a.probe);
  json j;
  j["command"] = "probe";
  j["config"] = cfg;
  j["report"] = reid::to_json(run.report);
  j["classes"] = run.model.classes;
  j["epochs_run"] = run.model.epochs_run;
  j["final_loss"] = run.model.loss_history.back();
  j["split"] = {{"train", run.split.train}, {"test", run.split.test}};
  const auto dir = out_dir(a);
  write_json(dir / "probe.json", j);
  reid::write_probe_model(run.model, dir / "probe_model.emb");
  std::cout << "probe " << a.attribute << " accuracy=" << reid::format_double(run.report.accuracy);
  if (run.report.auc) std::cout << " auc=" << reid::format_double(*run.report.auc);
  std::cout << " train=" << run.report.train_size << " test=" << run.report.test_size << "\n";
  return 0;
}

int cmd_synth(Args a) {
  for (const auto& s : a.attributes) a.synth.attributes.push_back(parse_attribute(s));
  a.synth.seed = a.seed;
  const auto fmt = a.format.empty() ? reid::FileFormat::bin : reid::parse_format(a.format);
  const auto out = reid::generate(a.synth);
  const auto dir = out_dir(a);
  const fs::path corpus_path = dir / (fmt == reid::FileFormat::bin ? "corpus.emb" : "corpus.csv");
  reid::write_corpus(out.corpus, corpus_path, fmt);
  json j;
  j["command"] = "synth";
  j["config"] = reid::to_json(a.synth);
  j["corpus_file"] = corpus_path.filename().string();
  j["truth"] = reid::to_json(out.truth);
  write_json(dir / "truth.json", j);
  std::cout << "synth " << out.corpus.size() << " records, dimension " << out.corpus.dimension() << " -> "
            << corpus_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Person re-identification embedding evaluation and PCA subspace selection"};
  app.require_subcommand(1);
  Args a;

  auto add_corpus = [&](CLI::App* sub) {
    sub->add_option("--corpus", a.corpus, "Corpus file (.emb EMB1 with .meta.jsonl sidecar, or .csv)")->required();
    sub->add_option("--format", a.format, "Corpus format: bin|csv (default: from extension)");
  };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", a.out, "Output directory")->capture_default_str(); };
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", a.threads, "Worker threads (0 = hardware concurrency); results do not depend on it")
        ->capture_default_str();
  };
  auto add_measure = [&](CLI::App* sub) {
    return sub->add_option("--measure", a.measure, "Similarity: cosine|euclidean")
        ->check(CLI::IsMember({"cosine", "euclidean", "negative_euclidean"}))
        ->capture_default_str();
  };
  auto add_metrics = [&](CLI::App* sub) {
    sub->add_option("--far", a.far, "FAR target for TAR@FAR (repeatable)")->capture_default_str();
    sub->add_option("--ks", a.ks, "CMC ranks, comma-separated")->capture_default_str();
    sub->add_flag("--exclude-same-dataset", a.exclude_same_dataset,
                  "mAP: treat same-identity gallery items from the probe's dataset as junk");
  };
  auto add_templated = [&](CLI::App* sub) {
    return sub->add_flag("--templated,!--no-templated", a.templated, "Score against per-identity mean templates");
  };
  auto add_aux = [&](CLI::App* sub) {
    sub->add_option("--aux-gallery", a.aux_gallery, "Extra corpus whose gallery is pooled into the PCA fit");
  };

  auto* eval = app.add_subcommand("eval", "Evaluate probes against the gallery (raw, or with a saved selection)");
  add_corpus(eval);
  add_out(eval);
  add_threads(eval);
  auto* eval_measure = add_measure(eval);
  add_metrics(eval);
  auto* eval_templated = add_templated(eval);
  eval->add_option("--selection", a.selection, "selection.json written by `select`");
  auto* eval_fit = eval->add_option("--fit-on", a.fit_on, "(not valid here)");
  auto* eval_aux = eval->add_option("--aux-gallery", a.aux_gallery, "(not valid here)");
  auto* eval_loo = eval->add_flag("--leave-one-out", a.leave_one_out, "(not valid here)");
  eval_fit->group("");
  eval_aux->group("");
  eval_loo->group("");

  auto* pca = app.add_subcommand("pca-eval", "Evaluate after projecting onto the full gallery PCA basis");
  add_corpus(pca);
  add_out(pca);
  add_threads(pca);
  add_measure(pca);
  add_metrics(pca);
  add_templated(pca);
  add_aux(pca);
  pca->add_option("--fit-on", a.fit_on, "PCA fit source: images|templates (default images)")
      ->check(CLI::IsMember({"images", "templates"}));

  auto* sweep = app.add_subcommand("oracle-sweep", "Excise the top k template-PCA components for every k (uses probe labels)");
  add_corpus(sweep);
  add_out(sweep);
  add_threads(sweep);
  add_measure(sweep);
  sweep->add_option("--far", a.far, "FAR target for TAR@FAR (repeatable)")->capture_default_str();
  sweep->add_flag("--exclude-same-dataset", a.exclude_same_dataset, "mAP: same-dataset same-identity items are junk");
  auto* sweep_templated = add_templated(sweep);
  add_aux(sweep);

  auto* select = app.add_subcommand("select", "Choose k from the gallery alone, then evaluate probes in that subspace");
  add_corpus(select);
  add_out(select);
  add_threads(select);
  add_measure(select);
  add_metrics(select);
  auto* select_templated = add_templated(select);
  add_aux(select);
  select->add_flag("--leave-one-out", a.leave_one_out, "Self-evaluate each image against its template without it");

  auto* probe = app.add_subcommand("probe", "Train and test a linear probe for an attribute on identity-disjoint halves");
  add_corpus(probe);
  add_out(probe);
  probe->add_option("--attribute", a.attribute, "Attribute name; `dataset` reads the dataset tag")->required();
  probe->add_option("--fraction", a.fraction, "Fraction of identities used for training")->capture_default_str();
  probe->add_option("--seed", a.seed, "Split seed")->capture_default_str();
  probe->add_option("--lr", a.probe.learning_rate, "Learning rate")->capture_default_str();
  probe->add_option("--l2", a.probe.l2, "L2 penalty on weights")->capture_default_str();
  probe->add_option("--epochs", a.probe.max_epochs, "Maximum epochs")->capture_default_str();
  probe->add_option("--tol", a.probe.tolerance, "Stop when the gradient max-norm is below this")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted identity, nuisance and attributes");
  add_out(synth);
  synth->add_option("--format", a.format, "Output format: bin|csv (default bin)");
  synth->add_option("--seed", a.seed, "Generator seed")->capture_default_str();
  synth->add_option("--dimension", a.synth.dimension, "Embedding dimension")->capture_default_str();
  synth->add_option("--identities", a.synth.identities, "Identity count")->capture_default_str();
  synth->add_option("--gallery-per-id", a.synth.gallery_per_identity, "Gallery images per identity")->capture_default_str();
  synth->add_option("--probe-per-id", a.synth.probe_per_identity, "Probe images per identity")->capture_default_str();
  synth->add_option("--id-var", a.synth.identity_variance, "Identity signal variance (total)")->capture_default_str();
  synth->add_option("--id-dim", a.synth.identity_dim, "Identity subspace dimension")->capture_default_str();
  synth->add_option("--nuis-var", a.synth.nuisance_variance, "Per-image nuisance variance (total)")->capture_default_str();
  synth->add_option("--nuis-dim", a.synth.nuisance_dim, "Nuisance subspace dimension")->capture_default_str();
  synth->add_option("--noise-var", a.synth.noise_variance, "Isotropic noise variance (total)")->capture_default_str();
  synth->add_option("--attribute", a.attributes, "Planted attribute name:classes:effect[:image] (repeatable)");
  synth->add_option("--dataset", a.synth.dataset, "Dataset tag")->capture_default_str();
  synth->add_option("--dataset-offset", a.synth.dataset_offset_norm, "Norm of a common offset added to every vector")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*eval) {
      if (eval_fit->count()) throw reid::ValidationError("--fit-on applies to pca-eval only; eval scores raw vectors");
      if (eval_aux->count()) throw reid::ValidationError("--aux-gallery needs a PCA fit; use pca-eval, oracle-sweep or select");
      if (eval_loo->count()) throw reid::ValidationError("--leave-one-out is a select option");
      return cmd_eval(a, eval_measure->count() > 0, eval_templated->count() > 0);
    }
    if (*pca) return cmd_pca_eval(a);
    if (*sweep) {
      if (sweep_templated->count() && !a.templated) throw reid::ValidationError("oracle-sweep always scores against templates");
      return cmd_oracle_sweep(a);
    }
    if (*select) {
      if (select_templated->count() && !a.templated) throw reid::ValidationError("select always scores against templates");
      return cmd_select(a);
    }
    if (*probe) return cmd_probe(a);
    if (*synth) return cmd_synth(a);
  } catch (const reid::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
