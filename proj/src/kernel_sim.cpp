#include "ranger/kernel_sim.hpp"

#include <algorithm>
#include <array>
#include <memory>

#include "ranger/errors.hpp"
#include "ranger/policy_map.hpp"
#include "ranger/reference_oracle.hpp"
#include "ranger/single_ept.hpp"

namespace ranger {

namespace {

constexpr std::array<std::uint8_t, 4> kSecret{0xDE, 0xAD, 0xBE, 0xEF};
constexpr std::array<std::uint8_t, 1> kKernelFill{0xCC};
constexpr std::array<std::uint8_t, 1> kOtherFill{0x90};
constexpr std::uint8_t kWriteByte = 0xAB;

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

// True when the bytes are a run of the planted pattern at any phase.
bool shows_secret(const std::vector<std::uint8_t>& data) {
  if (data.empty()) return false;
  for (std::size_t phase = 0; phase < kSecret.size(); ++phase) {
    bool match = true;
    for (std::size_t i = 0; i < data.size() && match; ++i) {
      match = data[i] == kSecret[(phase + i) % kSecret.size()];
    }
    if (match) return true;
  }
  return false;
}

bool all_zero(const std::vector<std::uint8_t>& data) {
  return std::all_of(data.begin(), data.end(), [](std::uint8_t b) { return b == 0; });
}

class Simulator {
 public:
  Simulator(ProtectionMode mode, const SimConfig& cfg);

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  void apply(const TraceEvent& ev);
  RunReport finish();

 private:
  struct Driver {
    GpaRange image;
    std::optional<EnclaveId> enclave;
    EptId oracle_ept;
  };

  struct Issue {
    std::string actor;
    Gpa src;
    Gpa dst;
    Access access = Access::Read;
    std::uint32_t len = 4;
    std::vector<std::uint8_t> payload;
    bool schedule = false;
    std::optional<bool> expect;
  };

  void on(const LoadDriver& e);
  void on(const UnloadDriver& e);
  void on(const CreateProcess& e);
  void on(const ExitProcess& e);
  void on(const Alloc& e);
  void on(const Free& e);
  void on(const Schedule& e);
  void on(const AccessEvent& e);

  Gpa actor_code(const std::string& actor) const;
  void ensure_running(const std::string& actor);
  void schedule(const std::string& actor);
  FinalAction issue(const Issue& is);
  Gpa resolve(const std::string& actor, const DstRef& ref) const;
  std::string code_owner_name(Gpa dst) const;

  void plant(const GpaRange& r, std::span<const std::uint8_t> pattern);
  void scrub(const GpaRange& r);
  void check_region(const std::string& name, const GpaRange& r);
  void check_oracle();
  void diag(std::string msg);

  ProtectionMode mode_;
  SimConfig cfg_;
  OsLayout os_;
  std::unique_ptr<AccessPolicy> policy_;
  FrameStore store_;
  FrameStore shadow_;  // receives legal writes only
  VcpuState vcpu_;
  std::unique_ptr<Dispatcher> dispatcher_;
  ReferenceOracle oracle_;
  SimAllocator allocator_{fixture::kPoolArena};
  std::map<std::string, Driver> drivers_;
  std::map<std::string, std::vector<GpaRange>> pools_;
  std::map<std::uint32_t, std::vector<GpaRange>> processes_;
  std::string running_ = fixture::kKernelActor;
  std::uint32_t next_oracle_ept_ = 1;
  RunReport report_;
};

Simulator::Simulator(ProtectionMode mode, const SimConfig& cfg)
    : mode_(mode), cfg_(cfg), os_(fixture::os_layout()), oracle_(os_, EptId{0}) {
  report_.mode = mode;
  report_.config = cfg;
  if (mode == ProtectionMode::MultiEpt) {
    policy_ = std::make_unique<MapState>(MapState::init(os_));
  } else if (mode == ProtectionMode::SingleEpt) {
    policy_ = std::make_unique<SingleEptPolicy>(SingleEptPolicy::init(os_));
  }
  if (policy_) {
    dispatcher_ = std::make_unique<Dispatcher>(*policy_, store_);
    dispatcher_->set_window_observer([this](const WindowRecord& w) {
      ++report_.counters.windows;
      if (w.before != w.after || !w.fake_zero_after) {
        ++report_.counters.window_violations;
        diag("single-step window on page " + to_hex(w.page.value) + " left the entry changed");
      }
    });
  }
  plant(os_.kernel_code, kKernelFill);
  for (const GpaRange& r : os_.structures) plant(r, kSecret);
  for (const GpaRange& r : os_.other_drivers) plant(r, kOtherFill);
}

void Simulator::diag(std::string msg) {
  if (report_.diagnostics.size() < cfg_.max_diagnostics) report_.diagnostics.push_back(std::move(msg));
}

void Simulator::plant(const GpaRange& r, std::span<const std::uint8_t> pattern) {
  for (FrameStore* s : {&store_, &shadow_}) {
    s->map_range(r);
    s->fill_pattern(r, pattern);
  }
}

void Simulator::scrub(const GpaRange& r) {
  const std::vector<std::uint8_t> zeros(r.size, 0);
  store_.write_range(r.base, zeros);
  shadow_.write_range(r.base, zeros);
}

void Simulator::check_region(const std::string& name, const GpaRange& r) {
  if (store_.digest(r) != shadow_.digest(r)) {
    ++report_.counters.integrity_violations;
    diag(name + " at " + to_hex(r.base.value) + " differs from its legal-write replay");
  }
}

void Simulator::check_oracle() {
  const FlatPolicy flat = oracle_.rebuild();
  const std::vector<const Ept*> epts = policy_->epts();
  const std::vector<Mismatch> mism = check_against(flat, epts);
  ++report_.counters.oracle_checks;
  report_.counters.oracle_mismatches += mism.size();
  for (const Mismatch& m : mism) diag("oracle: " + m.describe());
}

void Simulator::apply(const TraceEvent& ev) {
  std::visit([this](const auto& e) { on(e); }, ev);
  ++report_.counters.events;
  if (mode_ == ProtectionMode::MultiEpt && cfg_.oracle_checks) check_oracle();
}

Gpa Simulator::actor_code(const std::string& actor) const {
  if (actor == fixture::kKernelActor) return os_.kernel_code.base + fixture::kKernelRoutine;
  for (std::size_t j = 0; j < os_.other_drivers.size(); ++j) {
    if (actor == fixture::other_driver_name(j)) return os_.other_drivers[j].base + fixture::kEntryOffset;
  }
  auto it = drivers_.find(actor);
  if (it == drivers_.end()) throw SimulationError("unknown actor \"" + actor + "\"");
  return it->second.image.base + fixture::kEntryOffset;
}

std::string Simulator::code_owner_name(Gpa dst) const {
  if (os_.kernel_code.contains(dst)) return fixture::kKernelActor;
  for (std::size_t j = 0; j < os_.other_drivers.size(); ++j) {
    if (os_.other_drivers[j].contains(dst)) return fixture::other_driver_name(j);
  }
  for (const auto& [name, d] : drivers_) {
    if (d.image.contains(dst)) return name;
  }
  for (const auto& [name, list] : pools_) {
    if (!drivers_.contains(name)) continue;
    for (const GpaRange& r : list) {
      if (r.contains(dst)) return name;
    }
  }
  return {};
}

void Simulator::on(const LoadDriver& e) {
  if (e.name.empty() || e.name == fixture::kKernelActor || e.name.starts_with("other")) {
    throw SimulationError("driver name \"" + e.name + "\" is reserved");
  }
  if (drivers_.contains(e.name)) throw SimulationError("driver \"" + e.name + "\" is already loaded");
  if (e.image_size == 0) throw SimulationError("driver \"" + e.name + "\" has an empty image");
  const GpaRange image{e.image_base, e.image_size};
  (void)page_span(image);  // range check

  Driver d{image, std::nullopt, EptId{next_oracle_ept_++}};
  if (policy_) {
    d.enclave = policy_->on_driver_load(image.base, image.size);
    if (mode_ == ProtectionMode::MultiEpt) d.oracle_ept = policy_->layout().enclave(*d.enclave)->ept_id;
  }
  oracle_.driver_loaded(d.oracle_ept, image);
  drivers_.emplace(e.name, d);
  plant(image, kSecret);
}

void Simulator::on(const UnloadDriver& e) {
  auto it = drivers_.find(e.name);
  if (it == drivers_.end()) throw SimulationError("driver \"" + e.name + "\" is not loaded");
  const Driver d = it->second;
  check_region("image of " + e.name, d.image);
  for (const GpaRange& r : pools_[e.name]) check_region("pool of " + e.name, r);

  if (policy_) policy_->on_driver_unload(*d.enclave);
  oracle_.driver_unloaded(d.oracle_ept);
  for (const GpaRange& r : pools_[e.name]) {
    allocator_.release(r);
    scrub(r);
  }
  pools_.erase(e.name);
  drivers_.erase(it);
  if (running_ == e.name) running_.clear();
}

void Simulator::on(const CreateProcess& e) {
  if (processes_.contains(e.pid)) throw SimulationError("pid " + std::to_string(e.pid) + " already exists");
  if (e.regions.empty()) throw SimulationError("pid " + std::to_string(e.pid) + " has no regions");
  for (const GpaRange& r : e.regions) (void)page_span(r);
  if (policy_) policy_->on_process_create(e.pid, e.regions);
  oracle_.process_created(e.pid, e.regions);
  processes_.emplace(e.pid, e.regions);
  for (const GpaRange& r : e.regions) plant(r, kSecret);
}

void Simulator::on(const ExitProcess& e) {
  auto it = processes_.find(e.pid);
  if (it == processes_.end()) throw SimulationError("pid " + std::to_string(e.pid) + " does not exist");
  for (const GpaRange& r : it->second) check_region("EPROCESS " + std::to_string(e.pid), r);
  if (policy_) policy_->on_process_exit(e.pid);
  oracle_.process_exited(e.pid);
  processes_.erase(it);
}

void Simulator::on(const Alloc& e) {
  const Gpa caller = actor_code(e.actor);
  if (e.size == 0) throw SimulationError("zero-size allocation by " + e.actor);
  ensure_running(e.actor);
  const Align align = cfg_.force_page_aligned ? Align::PageAligned : e.align;
  const GpaRange r = allocator_.allocate(e.size, align);
  if (policy_) policy_->on_alloc(caller, r.base, r.size);
  oracle_.pool_allocated(caller, r);
  pools_[e.actor].push_back(r);
  plant(r, kSecret);
}

void Simulator::on(const Free& e) {
  (void)actor_code(e.actor);
  auto it = pools_.find(e.actor);
  if (it == pools_.end() || e.index >= it->second.size()) {
    throw SimulationError(e.actor + " has no pool " + std::to_string(e.index));
  }
  ensure_running(e.actor);
  const GpaRange r = it->second[e.index];
  if (drivers_.contains(e.actor)) check_region("pool of " + e.actor, r);
  if (policy_) policy_->on_free(r.base);
  oracle_.pool_freed(r.base);
  allocator_.release(r);
  scrub(r);
  it->second.erase(it->second.begin() + e.index);
}

void Simulator::on(const Schedule& e) {
  (void)actor_code(e.actor);
  schedule(e.actor);
}

void Simulator::ensure_running(const std::string& actor) {
  if (running_ != actor) schedule(actor);
}

void Simulator::schedule(const std::string& actor) {
  Issue is;
  is.actor = actor;
  is.src = os_.kernel_code.base + fixture::kSchedulerStub;
  is.dst = actor_code(actor);
  is.access = Access::Execute;
  is.len = 1;
  is.schedule = true;
  ++report_.counters.schedules;
  const FinalAction a = issue(is);
  running_ = a == FinalAction::Redirect ? std::string{} : actor;
}

Gpa Simulator::resolve(const std::string& actor, const DstRef& ref) const {
  auto pick_pool = [&](const std::string& who) -> GpaRange {
    auto it = pools_.find(who);
    if (it == pools_.end() || ref.index >= it->second.size()) {
      throw SimulationError("unresolved reference: " + who + " has no pool " + std::to_string(ref.index));
    }
    return it->second[ref.index];
  };
  GpaRange target;
  switch (ref.kind) {
    case RefKind::OwnPool: target = pick_pool(actor); break;
    case RefKind::PoolOf: target = pick_pool(ref.driver); break;
    case RefKind::ImageOf: {
      auto it = drivers_.find(ref.driver);
      if (it == drivers_.end()) throw SimulationError("unresolved reference: no driver \"" + ref.driver + "\"");
      target = it->second.image;
      break;
    }
    case RefKind::Eprocess: {
      auto it = processes_.find(ref.pid);
      if (it == processes_.end() || ref.index >= it->second.size()) {
        throw SimulationError("unresolved reference: no EPROCESS region " + std::to_string(ref.pid) + "/" +
                              std::to_string(ref.index));
      }
      target = it->second[ref.index];
      break;
    }
    case RefKind::OsKernelCode: target = os_.kernel_code; break;
    case RefKind::OsStructures: target = os_.structures.front(); break;
    case RefKind::OtherDriver:
      if (ref.index >= os_.other_drivers.size()) {
        throw SimulationError("unresolved reference: no other driver " + std::to_string(ref.index));
      }
      target = os_.other_drivers[ref.index];
      break;
  }
  if (ref.offset >= target.size) {
    throw SimulationError("unresolved reference: offset " + to_hex(ref.offset) + " beyond " +
                          std::string(to_string(ref.kind)) + " region");
  }
  return target.base + ref.offset;
}

void Simulator::on(const AccessEvent& e) {
  Issue is;
  is.actor = e.actor;
  is.src = actor_code(e.actor);
  is.dst = resolve(e.actor, e.dst);
  is.access = e.access;
  is.len = e.access == Access::Execute ? 1 : e.len;
  if (e.access == Access::Write) {
    is.payload = e.payload ? *e.payload : std::vector<std::uint8_t>(e.len, kWriteByte);
  }
  is.expect = e.expect_legal;
  ensure_running(e.actor);
  const FinalAction a = issue(is);
  if (e.access == Access::Execute) running_ = a == FinalAction::Redirect ? std::string{} : code_owner_name(is.dst);
}

FinalAction Simulator::issue(const Issue& is) {
  SimCounters& c = report_.counters;
  const Pfn page = page_of(is.dst);
  const std::uint64_t off = offset_in_page(is.dst);
  const std::uint64_t width = is.access == Access::Write ? is.payload.size() : is.len;
  if (off + width > kPageSize) throw RangeError("access at " + to_hex(is.dst.value) + " crosses a page boundary");
  store_.map(page);
  shadow_.map(page);

  const bool legal = oracle_.legal(is.src, is.dst, is.access);
  if (is.expect && *is.expect != legal) {
    ++c.label_mismatches;
    diag("access " + std::to_string(c.accesses) + " labelled " + (*is.expect ? "legal" : "illegal") +
         " but the reference model disagrees");
  }
  ++c.accesses;
  ++(legal ? c.legal_accesses : c.illegal_accesses);

  std::vector<std::pair<EptId, EptEntry>> before;
  if (policy_) {
    for (const Ept* e : policy_->epts()) before.emplace_back(e->id(), e->entry(page));
  }

  AccessOutcome out;
  if (dispatcher_) {
    AccessRequest req{is.src, is.dst, is.access, is.len, is.payload};
    out = dispatcher_->execute_access(vcpu_, req);
  } else {
    out.hpa = Hpa{is.dst.value};
    switch (is.access) {
      case Access::Read: out.data = store_.read_bytes(page, off, is.len); break;
      case Access::Write: store_.write_bytes(page, off, is.payload); break;
      case Access::Execute: break;
    }
  }

  if (policy_) {
    for (const auto& [id, entry] : before) {
      if (policy_->ept(id).entry(page) != entry) {
        ++c.window_violations;
        diag("EPT " + std::to_string(id.value) + " entry for page " + to_hex(page.value) +
             " changed across an access");
      }
    }
    if (!store_.is_zero(store_.fake_pfn())) {
      ++c.window_violations;
      diag("fake frame holds data after an access");
    }
  }

  const bool landed = out.action != FinalAction::Redirect;
  switch (is.access) {
    case Access::Read: {
      const std::vector<std::uint8_t> truth = shadow_.read_bytes(page, off, is.len);
      if (legal) {
        if (out.data != truth) {
          ++c.availability_failures;
          diag("legal read at " + to_hex(is.dst.value) + " by " + is.actor + " did not see true data");
        }
      } else {
        if (shows_secret(out.data)) {
          ++c.leaks;
          diag("illegal read at " + to_hex(is.dst.value) + " by " + is.actor + " returned planted secret bytes");
        }
        if (!all_zero(out.data)) ++c.nonzero_illegal_reads;
      }
      break;
    }
    case Access::Write:
      if (legal) {
        shadow_.write_bytes(page, off, is.payload);
        if (!landed) {
          ++c.availability_failures;
          diag("legal write at " + to_hex(is.dst.value) + " by " + is.actor + " was discarded");
        }
      } else if (store_.read_bytes(page, off, width) != shadow_.read_bytes(page, off, width)) {
        ++c.integrity_violations;
        diag("illegal write at " + to_hex(is.dst.value) + " by " + is.actor + " reached memory");
      }
      break;
    case Access::Execute:
      if (legal && !landed) {
        ++c.availability_failures;
        diag("legal fetch at " + to_hex(is.dst.value) + " by " + is.actor + " was redirected");
      } else if (!legal && landed) {
        ++c.nonzero_illegal_reads;
        diag("illegal fetch at " + to_hex(is.dst.value) + " by " + is.actor + " reached real code");
      }
      break;
  }

  LogRecord rec;
  rec.seq = c.accesses - 1;
  rec.actor = is.actor;
  rec.src = is.src;
  rec.dst = is.dst;
  rec.access = is.access;
  rec.len = static_cast<std::uint32_t>(width);
  rec.schedule = is.schedule;
  rec.ept_before = out.ept_before;
  rec.ept_after = out.ept_after;
  rec.action = out.action;
  rec.violations = out.violations;
  rec.switches = out.switches;
  rec.legal = legal;
  rec.ticks = access_cost(cfg_.cost, out.violations, out.switches, out.action);
  report_.modeled_total_ticks += rec.ticks;
  if (cfg_.keep_log) report_.log.push_back(std::move(rec));
  return out.action;
}

RunReport Simulator::finish() {
  auto record = [&](const std::string& name, const GpaRange& r) {
    check_region(name, r);
    report_.digests.push_back(RegionDigest{name, r, store_.digest(r)});
  };
  for (const GpaRange& r : os_.structures) record("os_structures", r);
  for (const auto& [name, d] : drivers_) {
    record("image:" + name, d.image);
    auto it = pools_.find(name);
    if (it == pools_.end()) continue;
    for (std::size_t i = 0; i < it->second.size(); ++i) record("pool:" + name + "#" + std::to_string(i), it->second[i]);
  }
  for (const auto& [pid, regions] : processes_) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
      record("eprocess:" + std::to_string(pid) + "#" + std::to_string(i), regions[i]);
    }
  }
  report_.counters.vcpu = vcpu_.counters;
  return std::move(report_);
}

}  // namespace

std::string_view to_string(ProtectionMode m) {
  switch (m) {
    case ProtectionMode::Off: return "off";
    case ProtectionMode::SingleEpt: return "single-ept";
    case ProtectionMode::MultiEpt: return "multi-ept";
  }
  return "?";
}

std::optional<ProtectionMode> parse_mode(std::string_view s) {
  if (s == "off") return ProtectionMode::Off;
  if (s == "single-ept") return ProtectionMode::SingleEpt;
  if (s == "multi-ept") return ProtectionMode::MultiEpt;
  return std::nullopt;
}

GpaRange SimAllocator::allocate(std::uint64_t size, Align align) {
  if (size == 0) throw SimulationError("zero-size allocation");
  std::uint64_t base = 0;
  std::uint64_t end = 0;
  if (align == Align::PageAligned) {
    base = align_up(cursor_, kPageSize);
    end = base + align_up(size, kPageSize);
  } else {
    base = align_up(cursor_, kNaturalAlign);
    end = base + size;
  }
  if (end > arena_.end() || end < base) throw SimulationError("pool arena exhausted");
  cursor_ = end;
  const GpaRange r{Gpa{base}, size};
  const PageSpan span = page_span(r);
  for (std::uint64_t p = span.first; p < span.last; ++p) ++pages_[p];
  return r;
}

void SimAllocator::release(const GpaRange& r) {
  const PageSpan span = page_span(r);
  for (std::uint64_t p = span.first; p < span.last; ++p) {
    auto it = pages_.find(p);
    if (it == pages_.end()) throw SimulationError("release of an unallocated page " + to_hex(p));
    if (--it->second == 0) pages_.erase(it);
  }
}

std::size_t SimAllocator::occupancy(Pfn page) const {
  auto it = pages_.find(page.value);
  return it == pages_.end() ? 0 : it->second;
}

std::string LogRecord::decision() const {
  if (violations == 0) return "allow";
  std::string s = switches > 0 ? "switch" : "";
  if (action != FinalAction::Allow) {
    if (!s.empty()) s += "+";
    s += to_string(action);
  }
  return s.empty() ? "allow" : s;
}

bool RunReport::violated() const {
  const SimCounters& c = counters;
  return c.leaks > 0 || c.nonzero_illegal_reads > 0 || c.integrity_violations > 0 ||
         c.availability_failures > 0 || c.oracle_mismatches > 0 || c.window_violations > 0;
}

std::uint64_t access_cost(const CostModel& c, std::uint32_t violations, std::uint32_t switches,
                          FinalAction action) {
  std::uint64_t t = c.base_access;
  t += violations * c.vmexit;
  t += switches * (c.ept_switch + c.page_walk_after_flush);
  if (action != FinalAction::Allow) t += c.mtf_roundtrip;
  return t;
}

RunReport run_trace(const Trace& trace, ProtectionMode mode, const SimConfig& config) {
  Simulator sim(mode, config);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const std::string where = "event " + std::to_string(i + 1) + ": ";
    try {
      sim.apply(trace[i]);
    } catch (const LivelockError& e) {
      throw LivelockError(where + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const RangeError& e) {
      throw RangeError(where + e.what());
    } catch (const Error& e) {
      throw SimulationError(where + e.what());
    }
  }
  return sim.finish();
}

}  // namespace ranger
