#include <algorithm>
#include <map>
#include <random>

#include "ranger/errors.hpp"
#include "ranger/kernel_sim.hpp"

namespace ranger {

namespace {

AccessEvent access(std::string actor, DstRef dst, Access kind, std::optional<bool> legal,
                   std::uint32_t len = 4) {
  AccessEvent a;
  a.actor = std::move(actor);
  a.dst = std::move(dst);
  a.access = kind;
  a.len = len;
  a.expect_legal = legal;
  return a;
}

AccessEvent write(std::string actor, DstRef dst, std::vector<std::uint8_t> payload, std::optional<bool> legal) {
  AccessEvent a = access(std::move(actor), std::move(dst), Access::Write, legal,
                         static_cast<std::uint32_t>(payload.size()));
  a.payload = std::move(payload);
  return a;
}

DstRef own_pool(std::uint32_t index, std::uint64_t offset = 0) {
  return DstRef{RefKind::OwnPool, {}, index, 0, offset};
}
DstRef pool_of(std::string driver, std::uint32_t index, std::uint64_t offset = 0) {
  return DstRef{RefKind::PoolOf, std::move(driver), index, 0, offset};
}
DstRef image_of(std::string driver, std::uint64_t offset = 0) {
  return DstRef{RefKind::ImageOf, std::move(driver), 0, 0, offset};
}
DstRef eprocess(std::uint32_t pid, std::uint32_t index, std::uint64_t offset = 0) {
  return DstRef{RefKind::Eprocess, {}, index, pid, offset};
}
DstRef simple(RefKind kind, std::uint32_t index = 0, std::uint64_t offset = 0) {
  return DstRef{kind, {}, index, 0, offset};
}

}  // namespace

Trace demo1_trace() {
  const std::string a = "A";
  const std::string b = "B";
  Trace t;
  t.push_back(LoadDriver{a, fixture::kDriverA.base, fixture::kDriverA.size});
  t.push_back(LoadDriver{b, fixture::kDriverB.base, fixture::kDriverB.size});
  t.push_back(Alloc{a, 0x100, Align::PageAligned});
  t.push_back(Alloc{b, 0x100, Align::PageAligned});
  t.push_back(write(a, own_pool(0), {0x11, 0x22, 0x33, 0x44}, true));
  t.push_back(access(a, own_pool(0), Access::Read, true));
  t.push_back(write(b, own_pool(0), {0x55, 0x66, 0x77, 0x88}, true));
  t.push_back(access(b, own_pool(0), Access::Read, true));
  // Driver A: steal and modify data B, dump driver B, patch OS structures.
  t.push_back(access(a, pool_of(b, 0), Access::Read, false));
  t.push_back(write(a, pool_of(b, 0), {0xAB, 0xAB, 0xAB, 0xAB}, false));
  t.push_back(access(a, image_of(b, 0x100), Access::Read, false, 16));
  t.push_back(write(a, simple(RefKind::OsStructures, 0, 0x40), {0xAB, 0xAB, 0xAB, 0xAB}, false));
  t.push_back(access(a, own_pool(0), Access::Read, true));
  t.push_back(access(b, own_pool(0), Access::Read, true));
  return t;
}

Trace privesc_trace() {
  const std::string a = "A";
  constexpr std::uint32_t kPid = 4;
  Trace t;
  t.push_back(CreateProcess{kPid, fixture::process_regions(kPid)});
  t.push_back(LoadDriver{a, fixture::kDriverA.base, fixture::kDriverA.size});
  t.push_back(Alloc{a, 0x100, Align::PageAligned});
  t.push_back(access(fixture::kKernelActor, eprocess(kPid, 1), Access::Read, true, 8));
  t.push_back(write(a, own_pool(0), {0x01, 0x02, 0x03, 0x04}, true));
  // Copy a SYSTEM token value over the process token.
  t.push_back(write(a, eprocess(kPid, 1), {0x00, 0x00, 0x00, 0x00, 0x04, 0x00, 0x00, 0x00}, false));
  t.push_back(access(fixture::kKernelActor, eprocess(kPid, 1), Access::Read, true, 8));
  return t;
}

Trace gen_benchmark_trace(std::uint64_t n_accesses, Align align, std::uint64_t k) {
  if (n_accesses == 0) throw ConfigError("benchmark needs at least one access");
  if (k == 0) throw ConfigError("scheduling quantum must be positive");
  const std::string a = "A";
  const std::string other = fixture::other_driver_name(0);
  Trace t;
  t.push_back(LoadDriver{a, fixture::kDriverA.base, fixture::kDriverA.size});
  t.push_back(Alloc{a, 0x100, align});
  for (std::uint64_t i = 1; i <= n_accesses; ++i) {
    t.push_back(access(a, own_pool(0), Access::Read, true));
    if (i % k == 0 && i < n_accesses) {
      t.push_back(Schedule{other});
      t.push_back(Schedule{a});
    }
  }
  return t;
}

namespace {

// Draws are spelled out with modulo and shifts so a seed yields the same
// trace with every standard library.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : rng_() % n; }
  bool chance(double p) { return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < p; }
  template <typename T>
  const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    std::vector<std::uint8_t> out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(1 + below(255));
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

struct Target {
  DstRef ref;
  std::uint64_t size;
};

class RandomTraceBuilder {
 public:
  RandomTraceBuilder(std::uint64_t seed, const RandomTraceOptions& opts) : d_(seed), opts_(opts) {}

  Trace build();

 private:
  static constexpr std::size_t kSlots = 6;
  static constexpr std::uint64_t kArenaBudget = 12ull << 20;
  static constexpr std::uint64_t kSizes[] = {0x10, 0x20, 0x40, 0x100, 0x400, 0x1000, 0x1800};

  std::vector<std::string> actors() const;
  bool is_enclave(const std::string& a) const { return images_.contains(a); }
  void load();
  void unload();
  void create_process();
  void exit_process();
  void alloc();
  void free_pool();
  void schedule();
  void access_event();
  bool legal_access(const std::string& actor);
  bool attack_access();
  void emit_access(const std::string& actor, const Target& t, Access kind, bool legal);

  Draw d_;
  RandomTraceOptions opts_;
  Trace out_;
  std::map<std::string, GpaRange> images_;
  std::map<std::string, std::vector<std::uint64_t>> pools_;  // live pool sizes by actor
  std::vector<std::uint32_t> pids_;
  std::uint64_t arena_used_ = 0;
};

std::vector<std::string> RandomTraceBuilder::actors() const {
  std::vector<std::string> a{fixture::kKernelActor};
  for (std::size_t j = 0; j < std::size(fixture::kOtherDrivers); ++j) a.push_back(fixture::other_driver_name(j));
  for (const auto& [name, _] : images_) a.push_back(name);
  return a;
}

void RandomTraceBuilder::load() {
  std::vector<std::size_t> free_slots;
  for (std::size_t s = 0; s < kSlots; ++s) {
    if (!images_.contains("drv" + std::to_string(s))) free_slots.push_back(s);
  }
  const std::size_t slot = d_.pick(free_slots);
  const std::string name = "drv" + std::to_string(slot);
  const GpaRange image{Gpa{0x3000'0000 + slot * 0x10'0000}, (1 + d_.below(3)) * kPageSize};
  images_.emplace(name, image);
  out_.push_back(LoadDriver{name, image.base, image.size});
}

void RandomTraceBuilder::unload() {
  std::vector<std::string> names;
  for (const auto& [n, _] : images_) names.push_back(n);
  const std::string name = d_.pick(names);
  images_.erase(name);
  pools_.erase(name);
  out_.push_back(UnloadDriver{name});
}

void RandomTraceBuilder::create_process() {
  // Lowest free multiple of four, so slots are reused after exits.
  std::uint32_t pid = 4;
  while (std::find(pids_.begin(), pids_.end(), pid) != pids_.end()) pid += 4;
  pids_.push_back(pid);
  out_.push_back(CreateProcess{pid, fixture::process_regions(pid)});
}

void RandomTraceBuilder::exit_process() {
  const std::size_t i = d_.below(pids_.size());
  out_.push_back(ExitProcess{pids_[i]});
  pids_.erase(pids_.begin() + static_cast<std::ptrdiff_t>(i));
}

void RandomTraceBuilder::alloc() {
  std::string actor;
  std::vector<std::string> enclaves;
  for (const auto& [n, _] : images_) enclaves.push_back(n);
  const std::uint64_t r = d_.below(10);
  if (r < 6 && !enclaves.empty()) actor = d_.pick(enclaves);
  else if (r < 8) actor = fixture::kKernelActor;
  else actor = fixture::other_driver_name(d_.below(std::size(fixture::kOtherDrivers)));

  const std::uint64_t size = kSizes[d_.below(std::size(kSizes))];
  Align align = Align::PageAligned;
  switch (opts_.align) {
    case AlignMix::PageAligned: break;
    case AlignMix::Natural: align = Align::Natural; break;
    case AlignMix::Mixed: align = d_.chance(0.5) ? Align::Natural : Align::PageAligned; break;
  }
  arena_used_ += (size + 2 * kPageSize - 1) / kPageSize * kPageSize;
  pools_[actor].push_back(size);
  out_.push_back(Alloc{actor, size, align});
}

void RandomTraceBuilder::free_pool() {
  std::vector<std::string> owners;
  for (const auto& [n, list] : pools_) {
    if (!list.empty()) owners.push_back(n);
  }
  const std::string actor = d_.pick(owners);
  auto& list = pools_[actor];
  const std::size_t i = d_.below(list.size());
  list.erase(list.begin() + static_cast<std::ptrdiff_t>(i));
  out_.push_back(Free{actor, static_cast<std::uint32_t>(i)});
}

void RandomTraceBuilder::schedule() { out_.push_back(Schedule{d_.pick(actors())}); }

void RandomTraceBuilder::emit_access(const std::string& actor, const Target& t, Access kind, bool legal) {
  static constexpr std::uint32_t kLens[] = {1, 2, 4, 8, 16};
  std::uint32_t len = 1;
  if (kind != Access::Execute) {
    do {
      len = kLens[d_.below(std::size(kLens))];
    } while (len > t.size);
  }
  DstRef ref = t.ref;
  ref.offset = d_.below(t.size / len) * len;
  if (kind == Access::Write) {
    out_.push_back(write(actor, ref, d_.bytes(len), legal));
  } else {
    out_.push_back(access(actor, ref, kind, legal, len));
  }
}

bool RandomTraceBuilder::legal_access(const std::string& actor) {
  struct Option {
    Target target;
    Access kind;
  };
  std::vector<Option> menu;
  auto rw = [&](const Target& t) {
    menu.push_back({t, Access::Read});
    menu.push_back({t, Access::Write});
  };
  const std::size_t others = std::size(fixture::kOtherDrivers);
  auto own_pools = [&](const std::string& who, bool as_own) {
    auto it = pools_.find(who);
    if (it == pools_.end()) return;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const auto idx = static_cast<std::uint32_t>(i);
      rw({as_own ? own_pool(idx) : pool_of(who, idx), it->second[i]});
    }
  };

  if (is_enclave(actor)) {
    own_pools(actor, true);
    auto it = pools_.find(actor);
    if (it != pools_.end()) {
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        menu.push_back({{own_pool(static_cast<std::uint32_t>(i)), it->second[i]}, Access::Execute});
      }
    }
    const Target image{image_of(actor), images_.at(actor).size};
    rw(image);
    menu.push_back({image, Access::Execute});
    for (std::size_t j = 0; j < others; ++j) {
      const Target t{simple(RefKind::OtherDriver, static_cast<std::uint32_t>(j)), fixture::kOtherDrivers[j].size};
      rw(t);
      menu.push_back({t, Access::Execute});
    }
    menu.push_back({{simple(RefKind::OsKernelCode), fixture::kKernelCode.size}, Access::Read});
    menu.push_back({{simple(RefKind::OsKernelCode), fixture::kKernelCode.size}, Access::Execute});
  } else {
    rw({simple(RefKind::OsStructures), fixture::kOsStructures.size});
    for (std::uint32_t pid : pids_) {
      const std::vector<GpaRange> regions = fixture::process_regions(pid);
      for (std::size_t i = 0; i < regions.size(); ++i) {
        rw({eprocess(pid, static_cast<std::uint32_t>(i)), regions[i].size});
      }
    }
    // Pools of the kernel and the other drivers are not enclaved.
    own_pools(actor, true);
    for (const auto& who : actors()) {
      if (who != actor && !is_enclave(who)) own_pools(who, false);
    }
    for (std::size_t j = 0; j < others; ++j) {
      rw({simple(RefKind::OtherDriver, static_cast<std::uint32_t>(j)), fixture::kOtherDrivers[j].size});
    }
    menu.push_back({{simple(RefKind::OsKernelCode), fixture::kKernelCode.size}, Access::Read});
    if (actor == fixture::kKernelActor) {
      menu.push_back({{simple(RefKind::OsKernelCode), fixture::kKernelCode.size}, Access::Execute});
    }
  }
  if (menu.empty()) return false;
  const Option& o = d_.pick(menu);
  emit_access(actor, o.target, o.kind, true);
  return true;
}

bool RandomTraceBuilder::attack_access() {
  std::vector<std::string> enclaves;
  for (const auto& [n, _] : images_) enclaves.push_back(n);
  if (enclaves.empty()) return false;

  const bool from_enclave = d_.below(10) < 7;
  const std::string attacker = from_enclave ? d_.pick(enclaves)
                                            : fixture::other_driver_name(d_.below(std::size(fixture::kOtherDrivers)));
  struct Option {
    Target target;
    Access kind;
  };
  std::vector<Option> menu;
  auto rw = [&](const Target& t) {
    menu.push_back({t, Access::Read});
    menu.push_back({t, Access::Write});
  };
  for (const std::string& victim : enclaves) {
    if (victim == attacker) continue;
    rw({image_of(victim), images_.at(victim).size});
    auto it = pools_.find(victim);
    if (it == pools_.end()) continue;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const Target t{pool_of(victim, static_cast<std::uint32_t>(i)), it->second[i]};
      rw(t);
      menu.push_back({t, Access::Execute});
    }
  }
  if (from_enclave) {
    rw({simple(RefKind::OsStructures), fixture::kOsStructures.size});
    for (std::uint32_t pid : pids_) {
      const std::vector<GpaRange> regions = fixture::process_regions(pid);
      for (std::size_t i = 0; i < regions.size(); ++i) {
        rw({eprocess(pid, static_cast<std::uint32_t>(i)), regions[i].size});
      }
    }
  }
  if (menu.empty()) return false;
  const Option& o = d_.pick(menu);
  emit_access(attacker, o.target, o.kind, false);
  return true;
}

void RandomTraceBuilder::access_event() {
  if (d_.chance(opts_.attack_probability)) {
    if (attack_access()) return;
    // Only reachable before any victim exists.
    if (opts_.attack_probability >= 1.0) {
      schedule();
      return;
    }
  }
  const std::vector<std::string> a = actors();
  while (!legal_access(d_.pick(a))) {
  }
}

Trace RandomTraceBuilder::build() {
  const std::uint64_t length = opts_.length;
  auto room = [&] { return out_.size() < length; };
  if (room()) load();
  if (room()) load();
  if (room()) create_process();

  while (room()) {
    const std::uint64_t r = d_.below(100);
    bool has_pools = false;
    for (const auto& [_, list] : pools_) has_pools = has_pools || !list.empty();
    if (r < 3 && images_.size() < 4) load();
    else if (r < 5 && images_.size() > 1) unload();
    else if (r < 8 && pids_.size() < 6) create_process();
    else if (r < 10 && pids_.size() > 1) exit_process();
    else if (r < 20 && arena_used_ < kArenaBudget) alloc();
    else if (r < 24 && has_pools) free_pool();
    else if (r < 32) schedule();
    else access_event();
  }
  return std::move(out_);
}

}  // namespace

Trace gen_random_trace(std::uint64_t seed, const RandomTraceOptions& opts) {
  if (opts.attack_probability < 0.0 || opts.attack_probability > 1.0) {
    throw ConfigError("attack probability must lie in [0, 1]");
  }
  return RandomTraceBuilder(seed, opts).build();
}

}  // namespace ranger
