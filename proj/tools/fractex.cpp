// fractex: split ratings, build a reduced matrix, expand, report and verify.
//
// Every option may also come from a JSON object passed with --config (keys
// are the long option names, '-' written as '_'). Command-line flags win.
// The seed falls back to FRACTEX_SEED, then 0.

#include <cstdlib>
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

#include "fractex/fractex.hpp"

namespace fs = std::filesystem;
using namespace fractex;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerification = 3 };

// Option values arrive as strings, from flags or from the config file, and
// are converted once the source is known.
class Settings {
 public:
  void bind(CLI::App& app, const std::string& name, const std::string& help) {
    options_[name] = app.add_option("--" + dashed(name), values_[name], help);
  }

  void load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::usage, "cannot read config file " + path);
    try {
      config_ = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::usage, "config file " + path + " is not valid JSON: " + e.what());
    }
    if (!config_.is_object()) fail(ErrorKind::usage, "config file must hold a JSON object");
  }

  std::optional<std::string> raw(const std::string& name) const {
    auto opt = options_.find(name);
    if (opt != options_.end() && opt->second->count() > 0) return values_.at(name);
    if (config_.contains(name)) {
      const auto& v = config_.at(name);
      return v.is_string() ? v.get<std::string>() : v.dump();
    }
    return std::nullopt;
  }

  std::string text(const std::string& name, const std::string& fallback) const {
    return raw(name).value_or(fallback);
  }

  std::string required(const std::string& name) const {
    auto v = raw(name);
    if (!v || v->empty()) fail(ErrorKind::usage, "--" + dashed(name) + " is required");
    return *v;
  }

  std::uint64_t number(const std::string& name, std::uint64_t fallback) const {
    auto v = raw(name);
    return v ? to_u64(*v, name) : fallback;
  }

  bool flag(const std::string& name, bool fallback) const {
    auto v = raw(name);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    fail(ErrorKind::usage, "--" + dashed(name) + " expects true or false, got '" + *v + "'");
  }

  std::uint64_t seed() const {
    if (auto v = raw("seed")) return to_u64(*v, "seed");
    if (const char* env = std::getenv("FRACTEX_SEED"); env && *env) return to_u64(env, "FRACTEX_SEED");
    return 0;
  }

 private:
  static std::string dashed(std::string s) {
    for (char& c : s)
      if (c == '_') c = '-';
    return s;
  }

  static std::uint64_t to_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
      fail(ErrorKind::usage, what + " expects a non-negative integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
  json config_ = json::object();
};

SparseBinaryMatrix load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  try {
    return read_triplets(in);
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

reducer::ReducedMatrix load_reduced(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  try {
    return reducer::read_reduced(in);
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

int cmd_split(const Settings& s) {
  const auto input = s.required("input");
  const auto out = s.required("out");
  const auto format_name = s.text("format", fs::path(input).extension() == ".csv" ? "csv" : "tsv");
  ingest::RatingFormat format;
  if (format_name == "csv")
    format = ingest::RatingFormat::csv_header;
  else if (format_name == "tsv")
    format = ingest::RatingFormat::tsv;
  else
    fail(ErrorKind::usage, "--format expects csv or tsv");

  const auto events = ingest::read_ratings_file(input, format);
  const auto ds = ingest::preprocess(events);
  ingest::write_split(out, ds);
  std::cout << "ratings read:   " << events.size() << "\n"
            << "users kept:     " << ds.user_index.size() << "\n"
            << "items:          " << ds.item_index.size() << "\n"
            << "train nnz:      " << ds.train.nnz() << "\n"
            << "test nnz:       " << ds.test.nnz() << "\n"
            << "written to:     " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

reducer::ReducedMatrix reduce_from(const Settings& s, const SparseBinaryMatrix& r) {
  const Index rows = s.number("rows", 0);
  const Index cols = s.number("cols", 0);
  if (rows == 0 || cols == 0) fail(ErrorKind::usage, "--rows and --cols are required");
  const auto method = s.text("method", "svd");
  if (method == "sketch") return reducer::sketch_reduced(r, rows, cols, s.seed());
  if (method != "svd") fail(ErrorKind::usage, "--method expects svd or sketch");
  spectral::SvdParams params;
  params.power_iters = static_cast<int>(s.number("power_iters", params.power_iters));
  params.oversample = static_cast<Index>(s.number("oversample", params.oversample));
  return reducer::build_reduced(r, rows, cols, s.seed(),
                                reducer::parse_rescale_mode(s.text("rescale", "unit")), params);
}

int cmd_reduce(const Settings& s) {
  const auto r = load_matrix(s.required("input"));
  const auto out = s.required("out");
  const auto rm = reduce_from(s, r);
  std::ofstream f(out, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + out);
  reducer::write_reduced(f, rm);
  if (!f) fail(ErrorKind::io, "write failed on " + out);
  if (auto spectrum = s.raw("spectrum")) {
    std::ofstream sp(*spectrum, std::ios::binary);
    spectral::write_spectrum(sp, rm.source_spectrum);
  }
  std::cout << "reduced " << r.n_rows() << "x" << r.n_cols() << " -> " << rm.data.rows() << "x"
            << rm.data.cols() << " (" << reducer::to_string(rm.rescale_mode)
            << "), mean entry " << rm.data.mean() << "\n";
  std::cout << "leading singular values:";
  for (double v : rm.source_spectrum) std::cout << ' ' << v;
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

std::vector<expander::BlockId> parse_blocks(const std::string& text) {
  // "i,j;i,j;..."
  std::vector<expander::BlockId> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ';');) {
    if (item.empty()) continue;
    expander::BlockId b;
    char comma = 0;
    std::istringstream cell(item);
    if (!(cell >> b.row >> comma >> b.col) || comma != ',')
      fail(ErrorKind::usage, "--blocks expects 'i,j;i,j;...', got '" + item + "'");
    out.push_back(b);
  }
  return out;
}

int cmd_expand(const Settings& s) {
  const auto input = s.required("input");
  const auto out = s.required("out");
  const auto train = load_matrix(input);
  std::optional<SparseBinaryMatrix> test;
  if (auto t = s.raw("test")) test = load_matrix(*t);

  expander::ExpansionConfig cfg;
  json run;
  run["input"] = absolute(input);
  if (test) run["test"] = absolute(*s.raw("test"));
  if (auto reduced = s.raw("reduced")) {
    cfg.reduced = load_reduced(*reduced);
    run["reduced"] = absolute(*reduced);
  } else {
    cfg.reduced = reduce_from(s, train);
    run["rows"] = cfg.reduced.data.rows();
    run["cols"] = cfg.reduced.data.cols();
    run["method"] = s.text("method", "svd");
    run["rescale"] = reducer::to_string(cfg.reduced.rescale_mode);
  }
  cfg.mode = expander::parse_mode(s.text("mode", "randomized"));
  cfg.shuffle = s.flag("shuffle", true);
  cfg.master_seed = s.seed();
  cfg.shard_granularity = expander::parse_granularity(s.text("granularity", "per_block"));
  cfg.gzip = s.flag("gzip", false);
  cfg.workers = static_cast<unsigned>(s.number("workers", 1));
  if (cfg.workers == 0) fail(ErrorKind::usage, "--workers must be at least 1");
  if (auto blocks = s.raw("blocks")) {
    cfg.only_blocks = parse_blocks(*blocks);
    run["blocks"] = *blocks;
  }
  run["out"] = absolute(out);
  run["seed"] = cfg.master_seed;
  run["mode"] = expander::to_string(cfg.mode);
  run["shuffle"] = cfg.shuffle;
  run["granularity"] = expander::to_string(cfg.shard_granularity);
  run["gzip"] = cfg.gzip;
  cfg.run_config = run;

  auto report = [](const ExpansionManifest& m, const std::string& dir) {
    std::cout << m.role << ": " << m.expanded_rows << "x" << m.expanded_cols << ", nnz "
              << m.total_nnz << " (expected " << m.expected_nnz << "), " << m.shards.size()
              << " shards in " << dir << "\n";
  };
  if (test) {
    const auto tdir = (fs::path(out) / "train").string();
    const auto edir = (fs::path(out) / "test").string();
    DirectorySink tr(tdir, cfg.gzip), te(edir, cfg.gzip);
    const auto sm = expander::expand_split(cfg, train, *test, tr, te);
    report(sm.train, tdir);
    report(sm.test, edir);
  } else {
    DirectorySink sink(out, cfg.gzip);
    report(expander::expand(cfg, train, sink), out);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

fs::path expansion_dir(const std::string& root) {
  if (fs::exists(fs::path(root) / "manifest.json")) return root;
  if (fs::exists(fs::path(root) / "train" / "manifest.json")) return fs::path(root) / "train";
  fail(ErrorKind::io, "no manifest.json under " + root);
}

int cmd_stats(const Settings& s) {
  const auto r = load_matrix(s.required("input"));
  const auto ex = verify::load_expansion(expansion_dir(s.required("expanded")));
  const auto out = s.required("out");
  const Index k = s.number("spectrum_k", 10);
  const auto& m = ex.manifest;
  const bool deterministic = m.config.value("mode", "") == "deterministic";

  std::vector<stats::StatisticSet> sets;
  std::vector<std::pair<std::string, std::string>> comparisons;

  stats::StatisticSet original{"original", stats::ranked(row_sums(r)), stats::ranked(col_sums(r)), {}};
  const Index k_orig = std::min({k, r.n_rows(), r.n_cols()});
  original.spectrum = stats::ranked(spectral::truncated_svd(r, k_orig, s.seed()).sigma);

  std::vector<double> rows(m.expanded_rows, 0.0), cols(m.expanded_cols, 0.0);
  std::vector<Index> tr, tc;
  for (const auto& shard : m.shards)
    for_each_shard_line(ex.read(shard.file), shard.file, [&](const ShardEntry& e) {
      if (e.row >= m.expanded_rows || e.col >= m.expanded_cols)
        fail(ErrorKind::data, "entry outside the expanded matrix in " + shard.file);
      rows[e.row] += e.value;
      cols[e.col] += e.value;
      if (!deterministic) {
        tr.push_back(e.row);
        tc.push_back(e.col);
      }
    });
  stats::StatisticSet expanded{"expanded", stats::ranked(std::move(rows)),
                               stats::ranked(std::move(cols)), {}};
  if (!deterministic && m.blocks.size() == m.reduced_rows * m.reduced_cols) {
    const auto assembled = from_triplets(tr, tc, m.expanded_rows, m.expanded_cols);
    const Index kk = std::min({k, assembled.n_rows(), assembled.n_cols()});
    expanded.spectrum = stats::ranked(spectral::truncated_svd(assembled, kk, s.seed()).sigma);
  }
  comparisons.push_back({"expanded", "original"});

  if (auto reduced = s.raw("reduced")) {
    const auto rm = load_reduced(*reduced);
    const auto sums = stats::predict_expanded_sums(rm.data, r);
    const auto sig_a = spectral::singular_values(rm.data);
    const auto pred_spec = stats::predict_expanded_spectrum(sig_a, original.spectrum.values, k);
    sets.push_back({"predicted", sums.rows, sums.cols, pred_spec});
    if (deterministic) expanded.spectrum = pred_spec;
    comparisons.push_back({"expanded", "predicted"});
  }
  sets.push_back(std::move(original));
  sets.push_back(std::move(expanded));
  stats::emit_report(out, sets, comparisons);

  std::ifstream summary(fs::path(out) / "summary.tsv");
  std::cout << summary.rdbuf();
  return kOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(const Settings& s) {
  const auto root = s.required("expanded");
  verify::VerifyInputs in{load_reduced(s.required("reduced")),
                          load_matrix(s.required("input")),
                          std::nullopt,
                          {},
                          std::nullopt,
                          static_cast<unsigned>(std::max<std::uint64_t>(1, s.number("workers", 1)))};
  if (auto t = s.raw("test")) {
    in.test = load_matrix(*t);
    in.expanded = verify::load_expansion(fs::path(root) / "train");
    in.expanded_test = verify::load_expansion(fs::path(root) / "test");
  } else {
    in.expanded = verify::load_expansion(expansion_dir(root));
  }
  const auto rep = verify::run_suites(in);
  for (const auto& c : rep.checks)
    std::cout << (c.passed ? "PASS  " : "FAIL  ") << c.suite << ": " << c.detail << "\n";
  if (!rep.passed()) {
    std::cerr << "verification failed\n";
    return kVerification;
  }
  std::cout << "all checks passed\n";
  return kOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return kUsage;
    case ErrorKind::verification:
      return kVerification;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractal expansion of sparse rating matrices"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with option values (flags win)");

  struct Command {
    CLI::App* app;
    Settings settings;
    int (*run)(const Settings&);
  };
  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help, int (*run)(const Settings&),
                 std::vector<std::pair<std::string, std::string>> options) {
    auto& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.run = run;
    c.app->add_option("--config", config_path, "JSON file with option values (flags win)");
    for (const auto& [opt, text] : options) c.settings.bind(*c.app, opt, text);
  };

  add("split", "Binarize, filter and leave-last-out split a ratings file", cmd_split,
      {{"input", "ratings file (csv with header, or tab-separated)"},
       {"out", "output directory"},
       {"format", "csv or tsv (default from extension)"}});
  add("reduce", "Build the reduced multiplier matrix", cmd_reduce,
      {{"input", "training matrix (triplet file)"},
       {"out", "reduced matrix file"},
       {"rows", "reduced rows m'"},
       {"cols", "reduced columns n'"},
       {"seed", "random seed"},
       {"rescale", "unit or paper"},
       {"method", "svd or sketch"},
       {"power_iters", "subspace iterations"},
       {"oversample", "extra columns in the sketch"},
       {"spectrum", "also write the preserved singular values here"}});
  add("expand", "Expand a matrix into sharded output", cmd_expand,
      {{"input", "training matrix (triplet file)"},
       {"test", "held-out matrix expanded alongside the training matrix"},
       {"reduced", "reduced matrix file (otherwise built from --rows/--cols)"},
       {"out", "output directory"},
       {"rows", "reduced rows when building in place"},
       {"cols", "reduced columns when building in place"},
       {"rescale", "unit or paper"},
       {"method", "svd or sketch"},
       {"power_iters", "subspace iterations"},
       {"oversample", "extra columns in the sketch"},
       {"seed", "random seed"},
       {"mode", "deterministic or randomized"},
       {"shuffle", "true or false"},
       {"workers", "worker threads"},
       {"granularity", "per_block or per_block_row"},
       {"gzip", "true or false"},
       {"blocks", "only these blocks, as 'i,j;i,j'"}});
  add("stats", "Ranked sums and spectra of original and expanded matrices", cmd_stats,
      {{"input", "original matrix (triplet file)"},
       {"expanded", "expansion output directory"},
       {"reduced", "reduced matrix, adds analytic predictions"},
       {"out", "report directory"},
       {"seed", "seed for the spectrum estimate"},
       {"spectrum_k", "singular values to estimate"}});
  add("verify", "Run the invariant suites against an expansion", cmd_verify,
      {{"input", "training matrix the expansion was built from"},
       {"test", "held-out matrix for split expansions"},
       {"reduced", "reduced matrix file"},
       {"expanded", "expansion output directory"},
       {"workers", "worker threads for the re-run"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    for (auto& [name, c] : commands) {
      if (!c.app->parsed()) continue;
      if (!config_path.empty()) c.settings.load_config(config_path);
      return c.run(c.settings);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
