#pragma once

#include "ebm/boltzmann.hpp"
#include "ebm/core.hpp"
#include "ebm/data.hpp"
#include "ebm/pot.hpp"
#include "ebm/sigmoid_net.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ebm {

/// Binary container for models, whiteners and patch sets.
///
/// Layout: the 4 bytes "EBMC", a little-endian u32 header length, a UTF-8 header
/// of newline-terminated lines ("version 1", "family <name>", "meta <key>=<value>",
/// "block <name> <rows> <cols>"), then each block's values as row-major
/// little-endian IEEE-754 doubles, in header order.
struct Container {
    static constexpr int kVersion = 1;

    std::string family;
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Mat>> blocks;

    Container& put(std::string name, Mat m) {
        blocks.emplace_back(std::move(name), std::move(m));
        return *this;
    }

    Container& set(std::string key, std::string value) {
        for (auto& [k, v] : meta) {
            if (k == key) {
                v = std::move(value);
                return *this;
            }
        }
        meta.emplace_back(std::move(key), std::move(value));
        return *this;
    }

    bool has_block(std::string_view name) const {
        return std::any_of(blocks.begin(), blocks.end(), [&](const auto& b) { return b.first == name; });
    }

    const Mat& block(std::string_view name) const {
        for (const auto& [n, m] : blocks) {
            if (n == name) {
                return m;
            }
        }
        throw Error("container: missing block '" + std::string(name) + "'");
    }

    std::string get(std::string_view key) const {
        for (const auto& [k, v] : meta) {
            if (k == key) {
                return v;
            }
        }
        throw Error("container: missing meta key '" + std::string(key) + "'");
    }

    std::string get(std::string_view key, std::string fallback) const {
        for (const auto& [k, v] : meta) {
            if (k == key) {
                return v;
            }
        }
        return fallback;
    }
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) {
        throw Error("format_double failed");
    }
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error("not a number: '" + std::string(s) + "'");
    }
    return v;
}

inline void write_container(std::ostream& out, const Container& c) {
    static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");
    auto bad = [](const std::string& s) { return s.find_first_of(" \n=") != std::string::npos || s.empty(); };
    if (c.family.empty() || c.family.find_first_of(" \n") != std::string::npos) {
        throw Error("container: invalid family name");
    }
    std::ostringstream h;
    h << "version " << Container::kVersion << '\n' << "family " << c.family << '\n';
    for (const auto& [k, v] : c.meta) {
        if (bad(k) || v.find('\n') != std::string::npos) {
            throw Error("container: invalid meta entry '" + k + "'");
        }
        h << "meta " << k << '=' << v << '\n';
    }
    for (const auto& [name, m] : c.blocks) {
        if (bad(name)) {
            throw Error("container: invalid block name '" + name + "'");
        }
        h << "block " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    }
    const std::string header = h.str();
    const auto len = static_cast<std::uint32_t>(header.size());
    out.write("EBMC", 4);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, m] : c.blocks) {
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
        out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    }
    if (!out) {
        throw Error("container: write failed");
    }
}

inline Container read_container(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EBMC", 4) != 0) {
        throw Error("container: bad magic");
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 28)) {
        throw Error("container: bad header length");
    }
    std::string header(len, '\0');
    in.read(header.data(), len);
    if (!in) {
        throw Error("container: truncated header");
    }
    Container c;
    std::istringstream hs(header);
    std::string line;
    std::vector<std::tuple<std::string, Index, Index>> shapes;
    bool saw_version = false;
    while (std::getline(hs, line)) {
        const auto sp = line.find(' ');
        const std::string tag = line.substr(0, sp);
        const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
        if (tag == "version") {
            if (rest != std::to_string(Container::kVersion)) {
                throw Error("container: unsupported version " + rest);
            }
            saw_version = true;
        } else if (tag == "family") {
            c.family = rest;
        } else if (tag == "meta") {
            const auto eq = rest.find('=');
            if (eq == std::string::npos) {
                throw Error("container: malformed meta line");
            }
            c.meta.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
        } else if (tag == "block") {
            std::istringstream bs(rest);
            std::string name;
            long long r = -1, cc = -1;
            bs >> name >> r >> cc;
            if (!bs || r < 0 || cc < 0) {
                throw Error("container: malformed block line");
            }
            shapes.emplace_back(name, static_cast<Index>(r), static_cast<Index>(cc));
        } else {
            throw Error("container: unknown header tag '" + tag + "'");
        }
    }
    if (!saw_version || c.family.empty()) {
        throw Error("container: header lacks version or family");
    }
    for (const auto& [name, r, cc] : shapes) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(r, cc);
        in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
        if (!in && rm.size() > 0) {
            throw Error("container: truncated payload for block '" + name + "'");
        }
        c.blocks.emplace_back(name, Mat(rm));
    }
    return c;
}

inline void save_container(const std::string& path, const Container& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot write " + path);
    }
    write_container(f, c);
}

inline Container load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open " + path);
    }
    return read_container(f);
}

inline Mat as_column(const Vec& v) { return Mat(v); }

inline Vec as_vector(const Mat& m) {
    if (m.cols() != 1) {
        throw DimensionError("container: expected a column block");
    }
    return m.col(0);
}

inline void require_family(const Container& c, std::string_view family) {
    if (c.family != family) {
        throw Error("container holds '" + c.family + "', expected '" + std::string(family) + "'");
    }
}

// ---------------------------------------------------------------------------
// Per-type conversions
// ---------------------------------------------------------------------------

inline Container to_container(const SigmoidNet& m) {
    Container c;
    c.family = "sigmoid-net";
    c.set("energy", m.form() == SigmoidEnergy::Logistic ? "logistic" : "weighted");
    const auto& p = m.parameters();
    c.put("J", p.J).put("b", as_column(p.b)).put("a", as_column(p.a));
    return c;
}

inline SigmoidNet sigmoid_net_from(const Container& c) {
    require_family(c, "sigmoid-net");
    const std::string e = c.get("energy");
    if (e != "logistic" && e != "weighted") {
        throw Error("sigmoid-net: unknown energy form '" + e + "'");
    }
    return SigmoidNet({c.block("J"), as_vector(c.block("b")), as_vector(c.block("a"))},
                      e == "logistic" ? SigmoidEnergy::Logistic : SigmoidEnergy::Weighted);
}

inline Container to_container(const PotModel& m) {
    const PotParams& p = m.parameters();
    Container c;
    c.family = "pot";
    c.set("hierarchical", p.hierarchical ? "1" : "0");
    c.set("train_W", p.train_W ? "1" : "0");
    c.set("norm_constrained", p.norm_constrained ? "1" : "0");
    c.set("exact_sampling", p.exact_sampling ? "1" : "0");
    c.set("grid_rows", std::to_string(p.grid_rows));
    c.set("grid_cols", std::to_string(p.grid_cols));
    c.put("J", p.J).put("W", p.W).put("alpha", as_column(p.alpha)).put("norm", Mat::Constant(1, 1, p.norm));
    return c;
}

inline PotModel pot_from(const Container& c) {
    require_family(c, "pot");
    PotParams p;
    p.J = c.block("J");
    p.W = c.block("W");
    p.alpha = as_vector(c.block("alpha"));
    p.norm = c.block("norm")(0, 0);
    p.hierarchical = c.get("hierarchical") == "1";
    p.train_W = c.get("train_W") == "1";
    p.norm_constrained = c.get("norm_constrained") == "1";
    p.exact_sampling = c.get("exact_sampling", "0") == "1";
    p.grid_rows = std::stoll(c.get("grid_rows"));
    p.grid_cols = std::stoll(c.get("grid_cols"));
    return PotModel(std::move(p));
}

inline Container to_container(const BoltzmannModel& m) {
    const BmParams& p = m.parameters();
    Container c;
    c.family = "boltzmann";
    c.set("nonneg_J", p.nonneg_J ? "1" : "0");
    c.set("learn_K", m.learns_lateral() ? "1" : "0");
    c.set("damping", format_double(m.mean_field().damping));
    c.set("tol", format_double(m.mean_field().tol));
    c.set("max_iter", std::to_string(m.mean_field().max_iter));
    c.put("J", p.J).put("K", p.K).put("b_v", as_column(p.b_v)).put("b_h", as_column(p.b_h));
    return c;
}

inline BoltzmannModel boltzmann_from(const Container& c) {
    require_family(c, "boltzmann");
    BmParams p{c.block("J"), c.block("K"), as_vector(c.block("b_v")), as_vector(c.block("b_h")),
               c.get("nonneg_J") == "1"};
    MeanFieldConfig mf;
    mf.damping = parse_double(c.get("damping"));
    mf.tol = parse_double(c.get("tol"));
    mf.max_iter = std::stoi(c.get("max_iter"));
    return BoltzmannModel(std::move(p), c.get("learn_K") == "1", mf);
}

inline Container to_container(const WhiteningTransform& t) {
    Container c;
    c.family = "whitener";
    c.set("mode", t.mode == WhitenMode::PCA ? "pca" : "zca");
    c.set("floor", format_double(t.floor));
    c.put("forward", t.forward)
        .put("inverse", t.inverse)
        .put("mean", as_column(t.mean))
        .put("eigenvalues", as_column(t.eigenvalues))
        .put("basis", t.basis);
    return c;
}

inline WhiteningTransform whitener_from(const Container& c) {
    require_family(c, "whitener");
    WhiteningTransform t;
    t.mode = c.get("mode") == "zca" ? WhitenMode::ZCA : WhitenMode::PCA;
    t.floor = parse_double(c.get("floor"));
    t.forward = c.block("forward");
    t.inverse = c.block("inverse");
    t.mean = as_vector(c.block("mean"));
    t.eigenvalues = as_vector(c.block("eigenvalues"));
    t.basis = c.block("basis");
    return t;
}

inline Container to_container(const PatchBatch& b) {
    Container c;
    c.family = "patches";
    c.set("height", std::to_string(b.height));
    c.set("width", std::to_string(b.width));
    c.set("eyes", std::to_string(b.eyes));
    c.set("stage", stage_name(b.stage));
    c.put("data", b.data);
    return c;
}

inline PatchBatch patches_from(const Container& c) {
    require_family(c, "patches");
    PatchBatch b;
    b.data = c.block("data");
    b.height = std::stoll(c.get("height"));
    b.width = std::stoll(c.get("width"));
    b.eyes = std::stoll(c.get("eyes"));
    const std::string s = c.get("stage");
    b.stage = s == "whitened" ? Stage::Whitened : s == "centered" ? Stage::Centered : Stage::Raw;
    return b;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat key=value settings. Files may group keys under "[section]" headers,
/// which prefix the keys as "section.key". Lines starting with '#' are comments.
class Config {
public:
    Config() = default;
    explicit Config(std::map<std::string, std::string> v) : values_(std::move(v)) {}

    static Config parse(std::istream& in) {
        Config c;
        std::string line, section;
        int lineno = 0;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        while (std::getline(in, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#') {
                continue;
            }
            if (line.front() == '[' && line.back() == ']') {
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw Error("config line " + std::to_string(lineno) + ": expected key = value");
            }
            std::string key = trim(line.substr(0, eq));
            if (!section.empty()) {
                key = section + "." + key;
            }
            c.values_[key] = trim(line.substr(eq + 1));
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) {
            throw Error("cannot open config " + path);
        }
        return parse(f);
    }

    /// Environment variable consulted for a key: EBM_ + upper-case key with '.' and '-' as '_'.
    static std::string env_name(std::string_view key) {
        std::string out = "EBM_";
        for (char ch : key) {
            out += (ch == '.' || ch == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        }
        return out;
    }

    /// Environment values override file values for every key in `known`.
    void apply_env(const std::vector<std::string>& known) {
        for (const auto& k : known) {
            if (const char* v = std::getenv(env_name(k).c_str())) {
                values_[k] = v;
            }
        }
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double num(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(it->second);
    }

    long long integer(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        long long v = 0;
        auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
            throw Error("config key '" + key + "' is not an integer: '" + it->second + "'");
        }
        return v;
    }

    bool flag(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        const std::string& v = it->second;
        if (v == "1" || v == "true" || v == "yes" || v == "on") {
            return true;
        }
        if (v == "0" || v == "false" || v == "no" || v == "off") {
            return false;
        }
        throw Error("config key '" + key + "' is not a boolean: '" + v + "'");
    }

    /// Writes "[section]" grouped key = value lines that parse() reads back.
    void dump(std::ostream& os) const {
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> groups;
        for (const auto& [k, v] : values_) {
            const auto dot = k.find('.');
            if (dot == std::string::npos) {
                groups[""].emplace_back(k, v);
            } else {
                groups[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
            }
        }
        bool first = true;
        for (const auto& [section, kv] : groups) {
            if (!first) {
                os << '\n';
            }
            first = false;
            if (!section.empty()) {
                os << '[' << section << "]\n";
            }
            for (const auto& [k, v] : kv) {
                os << k << " = " << v << '\n';
            }
        }
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace ebm
