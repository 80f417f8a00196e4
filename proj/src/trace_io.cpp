#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"
#include "ranger/errors.hpp"
#include "ranger/trace.hpp"

namespace ranger {

namespace {

using ojson = nlohmann::ordered_json;
using nlohmann::json;

// Thrown inside the per-line decoder, rewrapped with the line number.
struct FieldError {
  std::string what;
};

[[noreturn]] void fail(const std::string& what) { throw FieldError{what}; }

void only_keys(const json& j, std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items()) {
    if (!ok.contains(k)) fail("unexpected field \"" + k + "\"");
  }
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string get_string(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_string()) fail(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

std::uint64_t get_u64(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number_unsigned()) fail(std::string("field \"") + key + "\" must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::uint32_t get_u32(const json& j, const char* key) {
  const std::uint64_t v = get_u64(j, key);
  if (v > 0xFFFFFFFFull) fail(std::string("field \"") + key + "\" out of range");
  return static_cast<std::uint32_t>(v);
}

std::uint64_t opt_u64(const json& j, const char* key, std::uint64_t dflt) {
  return j.contains(key) ? get_u64(j, key) : dflt;
}

std::uint64_t parse_hex(const std::string& s, const char* key) {
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X') || s.size() > 18) {
    fail(std::string("field \"") + key + "\" must be a hex string like 0x1000");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 2; i < s.size(); ++i) {
    const char c = s[i];
    int d = 0;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else fail(std::string("field \"") + key + "\" has a bad hex digit");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

Gpa get_gpa(const json& j, const char* key) { return Gpa{parse_hex(get_string(j, key), key)}; }

std::string bytes_to_hex(const std::vector<std::uint8_t>& b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (std::uint8_t x : b) {
    s.push_back(kDigits[x >> 4]);
    s.push_back(kDigits[x & 0xF]);
  }
  return s;
}

std::vector<std::uint8_t> hex_to_bytes(const std::string& s) {
  if (s.size() % 2 != 0) fail("payload must have an even number of hex digits");
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 2);
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail("payload has a bad hex digit");
  };
  for (std::size_t i = 0; i < s.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(nib(s[i]) << 4 | nib(s[i + 1])));
  }
  return out;
}

Access parse_access(const std::string& s) {
  if (s == "read") return Access::Read;
  if (s == "write") return Access::Write;
  if (s == "execute") return Access::Execute;
  fail("unknown access kind \"" + s + "\"");
}

Align parse_align(const std::string& s) {
  if (s == "page") return Align::PageAligned;
  if (s == "natural") return Align::Natural;
  fail("unknown alignment \"" + s + "\"");
}

DstRef parse_ref(const json& j) {
  if (!j.is_object()) fail("field \"dst\" must be an object");
  const std::string kind = get_string(j, "ref");
  DstRef r;
  if (kind == "own_pool") {
    only_keys(j, {"ref", "index", "offset"});
    r.kind = RefKind::OwnPool;
    r.index = get_u32(j, "index");
  } else if (kind == "pool_of") {
    only_keys(j, {"ref", "driver", "index", "offset"});
    r.kind = RefKind::PoolOf;
    r.driver = get_string(j, "driver");
    r.index = get_u32(j, "index");
  } else if (kind == "image_of") {
    only_keys(j, {"ref", "driver", "offset"});
    r.kind = RefKind::ImageOf;
    r.driver = get_string(j, "driver");
  } else if (kind == "eprocess") {
    only_keys(j, {"ref", "pid", "index", "offset"});
    r.kind = RefKind::Eprocess;
    r.pid = get_u32(j, "pid");
    r.index = static_cast<std::uint32_t>(opt_u64(j, "index", 0));
  } else if (kind == "os_kernel_code") {
    only_keys(j, {"ref", "offset"});
    r.kind = RefKind::OsKernelCode;
  } else if (kind == "os_structures") {
    only_keys(j, {"ref", "offset"});
    r.kind = RefKind::OsStructures;
  } else if (kind == "other_driver") {
    only_keys(j, {"ref", "index", "offset"});
    r.kind = RefKind::OtherDriver;
    r.index = get_u32(j, "index");
  } else {
    fail("unknown ref \"" + kind + "\"");
  }
  r.offset = opt_u64(j, "offset", 0);
  return r;
}

ojson ref_json(const DstRef& r) {
  ojson j;
  j["ref"] = std::string(to_string(r.kind));
  switch (r.kind) {
    case RefKind::OwnPool: j["index"] = r.index; break;
    case RefKind::PoolOf:
      j["driver"] = r.driver;
      j["index"] = r.index;
      break;
    case RefKind::ImageOf: j["driver"] = r.driver; break;
    case RefKind::Eprocess:
      j["pid"] = r.pid;
      j["index"] = r.index;
      break;
    case RefKind::OtherDriver: j["index"] = r.index; break;
    case RefKind::OsKernelCode:
    case RefKind::OsStructures: break;
  }
  j["offset"] = r.offset;
  return j;
}

TraceEvent decode(const json& j) {
  if (!j.is_object()) fail("event must be a JSON object");
  const std::string ev = get_string(j, "ev");
  if (ev == "load_driver") {
    only_keys(j, {"ev", "name", "image_base", "image_size"});
    return LoadDriver{get_string(j, "name"), get_gpa(j, "image_base"), get_u64(j, "image_size")};
  }
  if (ev == "unload_driver") {
    only_keys(j, {"ev", "name"});
    return UnloadDriver{get_string(j, "name")};
  }
  if (ev == "create_process") {
    only_keys(j, {"ev", "pid", "regions"});
    CreateProcess cp{get_u32(j, "pid"), {}};
    const json& regions = field(j, "regions");
    if (!regions.is_array()) fail("field \"regions\" must be an array");
    for (const json& r : regions) {
      if (!r.is_object()) fail("region must be an object");
      only_keys(r, {"base", "size"});
      cp.regions.push_back(GpaRange{get_gpa(r, "base"), get_u64(r, "size")});
    }
    return cp;
  }
  if (ev == "exit_process") {
    only_keys(j, {"ev", "pid"});
    return ExitProcess{get_u32(j, "pid")};
  }
  if (ev == "alloc") {
    only_keys(j, {"ev", "actor", "size", "align"});
    return Alloc{get_string(j, "actor"), get_u64(j, "size"), parse_align(get_string(j, "align"))};
  }
  if (ev == "free") {
    only_keys(j, {"ev", "actor", "index"});
    return Free{get_string(j, "actor"), get_u32(j, "index")};
  }
  if (ev == "schedule") {
    only_keys(j, {"ev", "actor"});
    return Schedule{get_string(j, "actor")};
  }
  if (ev == "access") {
    only_keys(j, {"ev", "actor", "access", "dst", "len", "payload", "expect"});
    AccessEvent a;
    a.actor = get_string(j, "actor");
    a.access = parse_access(get_string(j, "access"));
    a.dst = parse_ref(field(j, "dst"));
    a.len = static_cast<std::uint32_t>(opt_u64(j, "len", 4));
    if (j.contains("payload")) {
      a.payload = hex_to_bytes(get_string(j, "payload"));
      if (!j.contains("len")) a.len = static_cast<std::uint32_t>(a.payload->size());
      if (a.payload->size() != a.len) fail("payload length differs from \"len\"");
    }
    if (j.contains("expect")) {
      const std::string e = get_string(j, "expect");
      if (e != "legal" && e != "illegal") fail("field \"expect\" must be legal or illegal");
      a.expect_legal = e == "legal";
    }
    if (a.len == 0) fail("field \"len\" must be positive");
    return a;
  }
  fail("unknown event \"" + ev + "\"");
}

ojson encode(const TraceEvent& ev) {
  ojson j;
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, LoadDriver>) {
          j["ev"] = "load_driver";
          j["name"] = e.name;
          j["image_base"] = to_hex(e.image_base.value);
          j["image_size"] = e.image_size;
        } else if constexpr (std::is_same_v<T, UnloadDriver>) {
          j["ev"] = "unload_driver";
          j["name"] = e.name;
        } else if constexpr (std::is_same_v<T, CreateProcess>) {
          j["ev"] = "create_process";
          j["pid"] = e.pid;
          ojson regions = ojson::array();
          for (const GpaRange& r : e.regions) {
            ojson o;
            o["base"] = to_hex(r.base.value);
            o["size"] = r.size;
            regions.push_back(std::move(o));
          }
          j["regions"] = std::move(regions);
        } else if constexpr (std::is_same_v<T, ExitProcess>) {
          j["ev"] = "exit_process";
          j["pid"] = e.pid;
        } else if constexpr (std::is_same_v<T, Alloc>) {
          j["ev"] = "alloc";
          j["actor"] = e.actor;
          j["size"] = e.size;
          j["align"] = std::string(to_string(e.align));
        } else if constexpr (std::is_same_v<T, Free>) {
          j["ev"] = "free";
          j["actor"] = e.actor;
          j["index"] = e.index;
        } else if constexpr (std::is_same_v<T, Schedule>) {
          j["ev"] = "schedule";
          j["actor"] = e.actor;
        } else {
          j["ev"] = "access";
          j["actor"] = e.actor;
          j["access"] = std::string(to_string(e.access));
          j["dst"] = ref_json(e.dst);
          j["len"] = e.len;
          if (e.payload) j["payload"] = bytes_to_hex(*e.payload);
          if (e.expect_legal) j["expect"] = *e.expect_legal ? "legal" : "illegal";
        }
      },
      ev);
  return j;
}

}  // namespace

Trace parse_trace(std::istream& in) {
  Trace out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    try {
      out.push_back(decode(j));
    } catch (const FieldError& e) {
      throw ParseError(lineno, e.what);
    }
  }
  return out;
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file " + path);
  return parse_trace(in);
}

std::string serialize_event(const TraceEvent& ev) { return encode(ev).dump(); }

void write_trace(std::ostream& out, const Trace& trace) {
  for (const TraceEvent& ev : trace) out << serialize_event(ev) << '\n';
}

void save_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace file " + path);
  write_trace(out, trace);
  if (!out) throw Error("failed writing trace file " + path);
}

}  // namespace ranger
