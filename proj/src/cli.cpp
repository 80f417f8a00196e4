#include "ranger/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "ranger/batch.hpp"
#include "ranger/errors.hpp"
#include "ranger/report.hpp"

namespace ranger {

namespace {

const std::map<std::string, ProtectionMode> kModes{
    {"off", ProtectionMode::Off},
    {"single-ept", ProtectionMode::SingleEpt},
    {"multi-ept", ProtectionMode::MultiEpt},
};

const std::map<std::string, AlignMix> kAligns{
    {"page", AlignMix::PageAligned},
    {"natural", AlignMix::Natural},
    {"mixed", AlignMix::Mixed},
};

std::uint64_t parse_seed_env(const char* text) {
  std::string s(text);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("RANGER_SEED must be a non-negative integer, got \"" + s + "\"");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("RANGER_SEED out of range: " + s);
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-EPT driver isolation simulator", "ranger"};
  app.require_subcommand(1);

  struct {
    std::string trace;
    std::string mode = "multi-ept";
    bool page_aligned = false;
    std::string report = "text";
    std::string cost_model;
    bool no_oracle = false;
  } run;
  CLI::App* run_cmd = app.add_subcommand("run", "Replay a trace under one protection mode");
  run_cmd->add_option("trace", run.trace, "JSON-lines trace file")->required();
  run_cmd->add_option("--mode", run.mode, "off, single-ept or multi-ept")
      ->check(CLI::IsMember({"off", "single-ept", "multi-ept"}));
  run_cmd->add_flag("--page-aligned", run.page_aligned, "Treat every allocation as page-aligned");
  run_cmd->add_option("--report", run.report, "text or json")->check(CLI::IsMember({"text", "json"}));
  run_cmd->add_option("--cost-model", run.cost_model, "JSON cost model file");
  run_cmd->add_flag("--no-oracle", run.no_oracle, "Skip reference-model checks");

  struct {
    std::string trace;
    bool page_aligned = false;
    std::string cost_model;
  } cmp;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "Replay a trace under all three modes");
  cmp_cmd->add_option("trace", cmp.trace, "JSON-lines trace file")->required();
  cmp_cmd->add_flag("--page-aligned", cmp.page_aligned, "Treat every allocation as page-aligned");
  cmp_cmd->add_option("--cost-model", cmp.cost_model, "JSON cost model file");

  struct {
    std::string kind;
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> n;
    std::uint64_t k = 64;
    std::optional<std::string> align;
    double attack_p = 0.2;
    std::string output;
  } gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Write a canned or generated trace");
  gen_cmd->add_option("kind", gen.kind, "demo1, privesc, bench or random")
      ->required()
      ->check(CLI::IsMember({"demo1", "privesc", "bench", "random"}));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (RANGER_SEED overrides)");
  gen_cmd->add_option("--n", gen.n, "Accesses (bench, default 10000) or events (random, default 200)");
  gen_cmd->add_option("--k", gen.k, "Accesses per scheduling quantum (bench)")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--align", gen.align, "page, natural or mixed")
      ->check(CLI::IsMember({"page", "natural", "mixed"}));
  gen_cmd->add_option("--attack-p", gen.attack_p, "Probability an access is an attack (random)")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("-o,--output", gen.output, "Output trace file, - for stdout")->required();

  struct {
    std::uint64_t seeds = 100;
    std::uint64_t first_seed = 1;
    unsigned jobs = 1;
    std::uint64_t length = 200;
    double attack_p = 0.2;
    std::string align = "mixed";
    std::string mode = "multi-ept";
    bool no_oracle = false;
  } batch;
  CLI::App* batch_cmd = app.add_subcommand("batch", "Run many seeded random traces");
  batch_cmd->add_option("--seeds", batch.seeds, "Number of seeds");
  batch_cmd->add_option("--first-seed", batch.first_seed, "First seed");
  batch_cmd->add_option("--jobs", batch.jobs, "Worker threads")->check(CLI::PositiveNumber);
  batch_cmd->add_option("--length", batch.length, "Events per trace");
  batch_cmd->add_option("--attack-p", batch.attack_p, "Attack probability")->check(CLI::Range(0.0, 1.0));
  batch_cmd->add_option("--align", batch.align, "page, natural or mixed")
      ->check(CLI::IsMember({"page", "natural", "mixed"}));
  batch_cmd->add_option("--mode", batch.mode, "off, single-ept or multi-ept")
      ->check(CLI::IsMember({"off", "single-ept", "multi-ept"}));
  batch_cmd->add_flag("--no-oracle", batch.no_oracle, "Skip reference-model checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (run_cmd->parsed()) {
      SimConfig cfg;
      cfg.force_page_aligned = run.page_aligned;
      cfg.oracle_checks = !run.no_oracle;
      if (!run.cost_model.empty()) cfg.cost = load_cost_model(run.cost_model);
      const Trace trace = load_trace(run.trace);
      const RunReport r = run_trace(trace, kModes.at(run.mode), cfg);
      out << (run.report == "json" ? report_json(r) : report_text(r));
      return r.exit_code();
    }
    if (cmp_cmd->parsed()) {
      SimConfig cfg;
      cfg.force_page_aligned = cmp.page_aligned;
      cfg.keep_log = false;
      if (!cmp.cost_model.empty()) cfg.cost = load_cost_model(cmp.cost_model);
      const Trace trace = load_trace(cmp.trace);
      out << comparison_table(compare_modes(trace, cfg));
      return 0;
    }
    if (gen_cmd->parsed()) {
      std::uint64_t seed = gen.seed;
      if (const char* env = std::getenv("RANGER_SEED")) seed = parse_seed_env(env);
      Trace trace;
      if (gen.kind == "demo1") {
        trace = demo1_trace();
      } else if (gen.kind == "privesc") {
        trace = privesc_trace();
      } else if (gen.kind == "bench") {
        const AlignMix mix = kAligns.at(gen.align.value_or("page"));
        if (mix == AlignMix::Mixed) throw ConfigError("bench takes --align page or natural");
        trace = gen_benchmark_trace(gen.n.value_or(10'000),
                                    mix == AlignMix::Natural ? Align::Natural : Align::PageAligned, gen.k);
      } else {
        RandomTraceOptions opts;
        opts.length = gen.n.value_or(200);
        opts.attack_probability = gen.attack_p;
        opts.align = kAligns.at(gen.align.value_or("mixed"));
        trace = gen_random_trace(seed, opts);
      }
      if (gen.output == "-") {
        write_trace(out, trace);
      } else {
        save_trace(gen.output, trace);
      }
      return 0;
    }
    if (batch_cmd->parsed()) {
      BatchConfig cfg;
      cfg.first_seed = batch.first_seed;
      cfg.seeds = batch.seeds;
      cfg.jobs = batch.jobs;
      cfg.trace.length = batch.length;
      cfg.trace.attack_probability = batch.attack_p;
      cfg.trace.align = kAligns.at(batch.align);
      cfg.mode = kModes.at(batch.mode);
      cfg.sim.oracle_checks = !batch.no_oracle;
      cfg.sim.keep_log = false;
      const BatchResult br = run_batch(cfg);
      const SimCounters& c = br.totals;
      out << "traces: " << br.traces << "  events: " << c.events << "  accesses: " << c.accesses
          << "  illegal: " << c.illegal_accesses << "\n";
      out << "traps: " << c.vcpu.ept_violations << "  redirects: " << c.vcpu.redirects
          << "  grants: " << c.vcpu.grants << "  switches: " << c.vcpu.ept_switches << "\n";
      out << "oracle checks: " << c.oracle_checks << "  mismatches: " << c.oracle_mismatches
          << "  leaks: " << c.leaks << "  integrity violations: " << c.integrity_violations
          << "  windows: " << c.windows << "  window violations: " << c.window_violations << "\n";
      for (const BatchFailure& f : br.failures) out << "seed " << f.seed << ": " << f.reason << "\n";
      out << "result: " << (br.clean() ? "clean" : std::to_string(br.failures.size()) + " failing seeds") << "\n";
      return br.clean() ? 0 : 2;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ranger
