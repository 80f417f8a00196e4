#include "ranger/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ranger/errors.hpp"

namespace ranger {

namespace {

using ojson = nlohmann::ordered_json;

ojson cost_json(const CostModel& c) {
  ojson j;
  j["base_access"] = c.base_access;
  j["vmexit"] = c.vmexit;
  j["ept_switch"] = c.ept_switch;
  j["mtf_roundtrip"] = c.mtf_roundtrip;
  j["page_walk_after_flush"] = c.page_walk_after_flush;
  return j;
}

ojson counters_json(const SimCounters& c) {
  ojson j;
  j["events"] = c.events;
  j["accesses"] = c.accesses;
  j["schedules"] = c.schedules;
  j["legal_accesses"] = c.legal_accesses;
  j["illegal_accesses"] = c.illegal_accesses;
  j["ept_violations"] = c.vcpu.ept_violations;
  j["rw_violations"] = c.vcpu.rw_violations;
  j["exec_violations"] = c.vcpu.exec_violations;
  j["ept_switches"] = c.vcpu.ept_switches;
  j["tlb_flushes"] = c.vcpu.tlb_flushes;
  j["redirects"] = c.vcpu.redirects;
  j["grants"] = c.vcpu.grants;
  j["mtf_exits"] = c.vcpu.mtf_exits;
  j["leaks"] = c.leaks;
  j["nonzero_illegal_reads"] = c.nonzero_illegal_reads;
  j["integrity_violations"] = c.integrity_violations;
  j["availability_failures"] = c.availability_failures;
  j["label_mismatches"] = c.label_mismatches;
  j["oracle_checks"] = c.oracle_checks;
  j["oracle_mismatches"] = c.oracle_mismatches;
  j["windows"] = c.windows;
  j["window_violations"] = c.window_violations;
  return j;
}

std::string digest_hex(std::uint64_t d) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace

CostModel parse_cost_model(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("cost model is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("cost model must be a JSON object");
  CostModel c;
  const std::pair<const char*, std::uint64_t*> fields[] = {
      {"base_access", &c.base_access},
      {"vmexit", &c.vmexit},
      {"ept_switch", &c.ept_switch},
      {"mtf_roundtrip", &c.mtf_roundtrip},
      {"page_walk_after_flush", &c.page_walk_after_flush},
  };
  for (const auto& [key, value] : j.items()) {
    std::uint64_t* slot = nullptr;
    for (const auto& [name, ptr] : fields) {
      if (key == name) slot = ptr;
    }
    if (!slot) throw ConfigError("unknown cost model key \"" + key + "\"");
    if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned())) {
      throw ConfigError("cost model key \"" + key + "\" must be a non-negative integer");
    }
    *slot = value.get<std::uint64_t>();
  }
  return c;
}

CostModel load_cost_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open cost model " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cost_model(ss.str());
}

std::string report_json(const RunReport& r) {
  ojson j;
  j["schema"] = kReportSchema;
  j["mode"] = std::string(to_string(r.mode));
  ojson cfg;
  cfg["oracle_checks"] = r.config.oracle_checks;
  cfg["force_page_aligned"] = r.config.force_page_aligned;
  cfg["cost_model"] = cost_json(r.config.cost);
  j["config"] = std::move(cfg);
  j["counters"] = counters_json(r.counters);
  j["modeled_total_ticks"] = r.modeled_total_ticks;
  j["exit_code"] = r.exit_code();

  ojson digests = ojson::array();
  for (const RegionDigest& d : r.digests) {
    ojson o;
    o["name"] = d.name;
    o["base"] = to_hex(d.range.base.value);
    o["size"] = d.range.size;
    o["digest"] = digest_hex(d.digest);
    digests.push_back(std::move(o));
  }
  j["digests"] = std::move(digests);

  ojson log = ojson::array();
  for (const LogRecord& e : r.log) {
    ojson o;
    o["seq"] = e.seq;
    o["actor"] = e.actor;
    o["src"] = to_hex(e.src.value);
    o["dst"] = to_hex(e.dst.value);
    o["access"] = std::string(to_string(e.access));
    o["len"] = e.len;
    o["schedule"] = e.schedule;
    o["ept_before"] = e.ept_before.value;
    o["ept_after"] = e.ept_after.value;
    o["decision"] = e.decision();
    o["trapped"] = e.trapped();
    o["violations"] = e.violations;
    o["switches"] = e.switches;
    o["legal"] = e.legal;
    o["ticks"] = e.ticks;
    log.push_back(std::move(o));
  }
  j["log"] = std::move(log);
  j["diagnostics"] = r.diagnostics;
  return j.dump(2) + "\n";
}

std::string report_text(const RunReport& r) {
  const SimCounters& c = r.counters;
  std::ostringstream os;
  os << "mode: " << to_string(r.mode) << "\n";
  os << "events: " << c.events << "  accesses: " << c.accesses << " (legal " << c.legal_accesses
     << ", illegal " << c.illegal_accesses << ")  schedules: " << c.schedules << "\n";
  os << "traps: " << c.vcpu.ept_violations << " (rw " << c.vcpu.rw_violations << ", exec "
     << c.vcpu.exec_violations << ")  switches: " << c.vcpu.ept_switches << "  redirects: " << c.vcpu.redirects
     << "  grants: " << c.vcpu.grants << "  mtf exits: " << c.vcpu.mtf_exits << "\n";
  os << "leaks: " << c.leaks << "  nonzero illegal reads: " << c.nonzero_illegal_reads
     << "  integrity violations: " << c.integrity_violations
     << "  availability failures: " << c.availability_failures << "\n";
  os << "oracle checks: " << c.oracle_checks << "  mismatches: " << c.oracle_mismatches
     << "  windows: " << c.windows << "  window violations: " << c.window_violations
     << "  label mismatches: " << c.label_mismatches << "\n";
  os << "modeled ticks: " << r.modeled_total_ticks << "\n";
  for (const RegionDigest& d : r.digests) {
    os << "digest " << d.name << " " << to_hex(d.range.base.value) << "+" << to_hex(d.range.size) << " "
       << digest_hex(d.digest) << "\n";
  }
  for (const std::string& msg : r.diagnostics) os << "note: " << msg << "\n";
  os << "result: " << (r.violated() ? "VIOLATION" : "clean") << "\n";
  return os.str();
}

std::uint64_t recompute_ticks(const RunReport& r, const CostModel& c) {
  std::uint64_t total = 0;
  for (const LogRecord& e : r.log) total += access_cost(c, e.violations, e.switches, e.action);
  return total;
}

Comparison compare_modes(const Trace& trace, const SimConfig& cfg) {
  Comparison cmp;
  for (ProtectionMode m : {ProtectionMode::Off, ProtectionMode::SingleEpt, ProtectionMode::MultiEpt}) {
    cmp.runs[static_cast<std::size_t>(m)] = run_trace(trace, m, cfg);
  }
  const std::uint64_t off = cmp.run(ProtectionMode::Off).modeled_total_ticks;
  const std::uint64_t single = cmp.run(ProtectionMode::SingleEpt).modeled_total_ticks;
  const std::uint64_t multi = cmp.run(ProtectionMode::MultiEpt).modeled_total_ticks;
  const bool empty = off == 0 && single == 0 && multi == 0;
  cmp.ordering_holds = empty || (off < multi && multi < single);
  std::ostringstream os;
  os << "ORDERING VERDICT: " << (cmp.ordering_holds ? "PASS" : "FAIL") << " (off " << off << " < multi-ept "
     << multi << " < single-ept " << single << ")";
  if (empty) {
    os << " empty trace";
  } else if (!cmp.ordering_holds && multi >= single) {
    os << " multi-ept pays " << cmp.run(ProtectionMode::MultiEpt).counters.vcpu.grants
       << " temporary grants and " << cmp.run(ProtectionMode::MultiEpt).counters.vcpu.ept_switches
       << " EPT switches";
  }
  cmp.verdict_line = os.str();
  return cmp;
}

std::string comparison_table(const Comparison& c) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %10s %10s %10s %10s %10s %10s %14s %6s\n", "mode", "accesses", "traps",
                "rw traps", "switches", "redirects", "grants", "ticks", "clean");
  os << line;
  for (ProtectionMode m : {ProtectionMode::Off, ProtectionMode::SingleEpt, ProtectionMode::MultiEpt}) {
    const RunReport& r = c.run(m);
    const SimCounters& k = r.counters;
    std::snprintf(line, sizeof line, "%-11s %10llu %10llu %10llu %10llu %10llu %10llu %14llu %6s\n",
                  std::string(to_string(m)).c_str(), static_cast<unsigned long long>(k.accesses),
                  static_cast<unsigned long long>(k.vcpu.ept_violations),
                  static_cast<unsigned long long>(k.vcpu.rw_violations),
                  static_cast<unsigned long long>(k.vcpu.ept_switches),
                  static_cast<unsigned long long>(k.vcpu.redirects),
                  static_cast<unsigned long long>(k.vcpu.grants),
                  static_cast<unsigned long long>(r.modeled_total_ticks), r.violated() ? "no" : "yes");
    os << line;
  }
  os << c.verdict_line << "\n";
  return os.str();
}

}  // namespace ranger
