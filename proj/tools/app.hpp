#pragma once

// Experiment-runner plumbing: resolved settings, artifact files with provenance
// headers, assertions and the manifest.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgrushin/config.hpp"
#include "sgrushin/errors.hpp"
#include "sgrushin/operator.hpp"

namespace sgrushin::app {

using json = nlohmann::ordered_json;

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> s = {
        "solve-forward", "solve-backward", "identity-check", "weight-check", "carleman-backward", "carleman-forward",
        "cacciopoli", "observability", "null-control", "inverse-uniqueness", "inverse-reconstruct", "hardy"};
    return s;
}

/// Every accepted key. Keys that a subcommand does not read are ignored by it.
inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> k = {
        "problem.gamma", "problem.sigma", "problem.T", "problem.nx", "problem.ny", "problem.nt",
        "problem.epsilon", "problem.a", "problem.a1", "problem.a2", "problem.alpha", "problem.beta",
        "problem.seed",
        "weights.lambda", "weights.s", "weights.mu", "weights.delta0", "weights.tau",
        "run.samples", "run.fields", "run.points", "run.residual_tol", "run.ulp_tol", "run.oracle_tol",
        "run.cv_max", "run.gammas", "run.sigmas", "run.mesh", "run.lambdas", "run.omegas", "run.penalty",
        "run.penalties", "run.cg_tol", "run.max_iter", "run.space", "run.u0", "run.f_amp", "run.F_amp",
        "run.symmetry_pairs", "run.target", "run.collapse_min", "run.tikhonov", "run.tikhonovs", "run.noise",
        "run.observations", "run.roundtrip_tol", "run.cells", "run.eta",
        "output.dir", "output.formats"};
    return k;
}

/// Subcommand defaults, written in the config grammar itself.
inline std::string default_text(const std::string& sub) {
    std::map<std::string, std::map<std::string, std::string>> d;
    d["problem"] = {{"gamma", "1"}, {"sigma", "0.1"}, {"T", "1"}, {"nx", "8"}, {"nt", "8"}, {"epsilon", "hx"},
                    {"a", "0.5"}, {"a1", "0.2"}, {"a2", "0.35"}, {"alpha", "0"}, {"beta", "0"}, {"seed", "1"}};
    d["weights"] = {{"delta0", "1"}, {"tau", "2.5"}};
    d["output"] = {{"dir", "out"}, {"formats", "csv, json, svg"}};
    auto& p = d["problem"];
    auto& r = d["run"];
    if (sub == "solve-forward") {
        r = {{"u0", "mode"}, {"f_amp", "0"}, {"F_amp", "0.5"}, {"oracle_tol", "1e-10"}};
    } else if (sub == "solve-backward") {
        r = {{"oracle_tol", "1e-10"}};
    } else if (sub == "identity-check") {
        p["seed"] = "2024";
        r = {{"fields", "1000"}, {"points", "5"}, {"residual_tol", "1e-8"}, {"ulp_tol", "10"}};
    } else if (sub == "weight-check") {
        r = {{"gammas", "0.5, 1, 2"}, {"sigmas", "0, 0.1, 0.24"}, {"mesh", "128, 128, 64"}};
    } else if (sub == "carleman-backward") {
        p["seed"] = "17";
        r = {{"samples", "20"}, {"cv_max", "0.5"}};
    } else if (sub == "carleman-forward") {
        p["seed"] = "23";
        p["gamma"] = "0.5";
        p["T"] = "1.5";
        r = {{"samples", "20"}, {"cv_max", "0.5"}};
    } else if (sub == "cacciopoli") {
        p["nt"] = "6";
        d["weights"]["s"] = "0.25";
        r = {{"sigmas", "0.1, 0.2, 0.24, 0.249"}};
    } else if (sub == "observability") {
        p["nt"] = "6";
        p["seed"] = "9";
        r = {{"samples", "50"}, {"omegas", "0.5, 0.25, 0.125"}};
    } else if (sub == "null-control") {
        p["nt"] = "6";
        r = {{"u0", "bump"}, {"penalty", "1e-8"}, {"penalties", "1e-4, 1e-6, 1e-8"}, {"cg_tol", "1e-10"},
             {"max_iter", "500"}, {"space", "two_block"}, {"target", "1e-3"}, {"symmetry_pairs", "3"},
             {"oracle_tol", "1e-10"}};
    } else if (sub == "inverse-uniqueness") {
        p["nx"] = "4";
        p["nt"] = "4";
        r = {{"collapse_min", "1e3"}};
    } else if (sub == "inverse-reconstruct") {
        p["nx"] = "4";
        p["nt"] = "4";
        p["seed"] = "19";
        r = {{"tikhonov", "1e-12"}, {"tikhonovs", "1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1"}, {"noise", "0.01"},
             {"roundtrip_tol", "1e-6"}};
    } else if (sub == "hardy") {
        r = {{"samples", "1000"}, {"cells", "4096"}, {"eta", "1e-3"}};
    }
    std::ostringstream os;
    for (const auto& [sec, kv] : d) {
        os << '[' << sec << "]\n";
        for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    }
    return os.str();
}

/// User config over subcommand defaults. Every value read is echoed into the manifest.
class Settings {
public:
    Settings(Config user, const std::string& sub) : user_(std::move(user)), def_(Config::parse(default_text(sub), "defaults")) {
        user_.check_known(known_keys());
    }

    bool has(const std::string& k) const { return user_.has(k) || def_.has(k); }
    bool user_has(const std::string& k) const { return user_.has(k); }
    const Config& source(const std::string& k) const { return user_.has(k) ? user_ : def_; }

    double num(const std::string& k) {
        const double v = need(source(k).num(k), k);
        echo_[k] = v;
        return v;
    }
    std::optional<double> opt_num(const std::string& k) {
        if (!has(k)) return std::nullopt;
        return num(k);
    }
    long long integer(const std::string& k) {
        const long long v = need(source(k).integer(k), k);
        echo_[k] = v;
        return v;
    }
    std::vector<double> list(const std::string& k) {
        const auto v = need(source(k).list(k), k);
        echo_[k] = v;
        return v;
    }
    std::string word(const std::string& k) {
        const auto v = need(source(k).str(k), k);
        echo_[k] = v;
        return v;
    }
    std::vector<std::string> words(const std::string& k) {
        const auto v = need(source(k).words(k), k);
        echo_[k] = v;
        return v;
    }
    std::optional<std::string> opt_word(const std::string& k) {
        if (!has(k)) return std::nullopt;
        return word(k);
    }

    [[noreturn]] void bad(const std::string& k, const std::string& msg) const { source(k).bad(k, msg); }
    void require(bool ok, const std::string& k, const std::string& msg) const {
        if (!ok) bad(k, msg);
    }

    /// Echo sorted by key; the map keeps it deterministic.
    json echo() const {
        json j = json::object();
        for (const auto& [k, v] : echo_) j[k] = v;
        return j;
    }

private:
    template <class T>
    T need(std::optional<T> v, const std::string& k) const {
        if (!v) throw parameter_error("missing value for '" + k + "'");
        return *v;
    }
    Config user_;
    Config def_;
    std::map<std::string, json> echo_;
};

struct Options {
    std::string config_path;  ///< empty: defaults only
    std::string out_dir;      ///< empty: output.dir
    unsigned workers = 1;
    std::vector<std::string> formats;  ///< empty: output.formats
};

struct Assertion {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double bound = 0.0;
    std::string detail;
};

/// State of one run: where files go, what was asserted, what was measured.
class Run {
public:
    Run(std::string sub, Settings& cfg, std::string hash, std::filesystem::path dir, std::set<std::string> formats,
        unsigned workers)
        : sub_(std::move(sub)), cfg_(cfg), hash_(std::move(hash)), dir_(std::move(dir)),
          formats_(std::move(formats)), workers_(workers) {}

    Settings& cfg() { return cfg_; }
    unsigned workers() const { return workers_; }
    const std::string& subcommand() const { return sub_; }
    bool wants(const std::string& fmt) const { return formats_.count(fmt) > 0; }
    json& metrics() { return metrics_; }
    void input_hash(const std::string& name, const std::string& h) { inputs_[name] = h; }

    std::string header_text() const { return "sgrushin " + sub_ + " config=" + hash_; }

    /// CSV artifact with a '#' header line.
    void csv(const std::string& name, const std::function<void(std::ostream&)>& body) {
        if (!wants("csv")) return;
        write(name + ".csv", [&](std::ostream& os) {
            os << "# " << header_text() << '\n';
            body(os);
        });
    }

    /// JSON artifact; the header goes into a leading "_comment" member so the file stays valid JSON.
    void json_file(const std::string& name, const json& body) {
        if (!wants("json")) return;
        write(name + ".json", [&](std::ostream& os) { os << with_comment(body).dump(2) << '\n'; });
    }

    /// Parses a library writer's JSON and stores it as an artifact.
    void json_from(const std::string& name, const std::function<void(std::ostream&)>& body) {
        if (!wants("json")) return;
        std::ostringstream ss;
        body(ss);
        json_file(name, json::parse(ss.str()));
    }

    void svg(const std::string& name, const std::function<void(std::ostream&)>& body) {
        if (!wants("svg")) return;
        write(name + ".svg", [&](std::ostream& os) {
            os << "<!-- " << header_text() << " -->\n";
            body(os);
        });
    }

    bool check(const std::string& name, bool pass, double value, double bound, const std::string& detail = "") {
        asserts_.push_back({name, pass, value, bound, detail});
        return pass;
    }

    const std::vector<Assertion>& assertions() const { return asserts_; }
    bool all_pass() const {
        for (const auto& a : asserts_)
            if (!a.pass) return false;
        return true;
    }

    void write_manifest() {
        json j;
        j["subcommand"] = sub_;
        j["config_hash"] = hash_;
        j["inputs"] = inputs_;
        j["config"] = cfg_.echo();
        j["metrics"] = metrics_;
        json a = json::array();
        for (const auto& x : asserts_)
            a.push_back({{"name", x.name}, {"pass", x.pass}, {"value", finite_or_null(x.value)},
                         {"bound", finite_or_null(x.bound)}, {"detail", x.detail}});
        j["assertions"] = a;
        j["status"] = all_pass() ? "pass" : "fail";
        j["files"] = files_;
        std::ofstream f(dir_ / (sub_ + ".manifest.json"), std::ios::binary);
        if (!f) throw parameter_error("cannot write manifest in '" + dir_.string() + "'");
        f << with_comment(j).dump(2) << '\n';
    }

    static json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

private:
    json with_comment(const json& body) const {
        json out;
        out["_comment"] = header_text();
        for (auto it = body.begin(); it != body.end(); ++it) out[it.key()] = it.value();
        return out;
    }
    void write(const std::string& file, const std::function<void(std::ostream&)>& body) {
        const std::string name = sub_ + "." + file;
        std::ofstream f(dir_ / name, std::ios::binary);
        if (!f) throw parameter_error("cannot write '" + (dir_ / name).string() + "'");
        f << std::setprecision(17);
        body(f);
        files_.push_back(name);
    }

    std::string sub_;
    Settings& cfg_;
    std::string hash_;
    std::filesystem::path dir_;
    std::set<std::string> formats_;
    unsigned workers_;
    json metrics_ = json::object();
    json inputs_ = json::object();
    std::vector<Assertion> asserts_;
    std::vector<std::string> files_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw parameter_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace sgrushin::app
