#pragma once

// Sectioned key-value configuration. Grammar (docs/config.md has the key list):
//
//   file    := { line '\n' }
//   line    := ws [ section | pair ] ws [ comment ]
//   section := '[' name ']'
//   pair    := key ws '=' ws value
//   comment := ('#' | ';') any*
//   name, key := [A-Za-z0-9_]+
//   value   := any* up to a comment, surrounding whitespace trimmed
//
// Keys are addressed as "section.key". Lists are comma separated. A key may
// appear once; pairs before the first section header are an error.

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"

namespace sgrushin {

struct ConfigEntry {
    std::string value;
    int line = 0;
};

class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "config") {
        Config c;
        c.origin_ = origin;
        c.text_ = text;
        std::istringstream is(text);
        std::string raw, section;
        int lineno = 0;
        while (std::getline(is, raw)) {
            ++lineno;
            std::string line = raw;
            if (const auto p = line.find_first_of("#;"); p != std::string::npos) line.erase(p);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') c.fail(lineno, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (!valid_name(section)) c.fail(lineno, "bad section name '" + section + "'");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) c.fail(lineno, "expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            if (!valid_name(key)) c.fail(lineno, "bad key '" + key + "'");
            if (section.empty()) c.fail(lineno, "key '" + key + "' outside any section");
            const std::string full = section + "." + key;
            if (c.entries_.count(full))
                c.fail(lineno, "duplicate key '" + full + "' (first on line " +
                                   std::to_string(c.entries_.at(full).line) + ")");
            c.entries_[full] = {trim(line.substr(eq + 1)), lineno};
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw parameter_error("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    const std::map<std::string, ConfigEntry>& entries() const { return entries_; }
    const std::string& text() const { return text_; }

    /// Rejects keys outside `allowed` (with line numbers).
    void check_known(const std::set<std::string>& allowed) const {
        for (const auto& [k, e] : entries_)
            if (!allowed.count(k)) fail(e.line, "unknown key '" + k + "'");
    }

    std::optional<std::string> str(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second.value;
    }

    std::optional<double> num(const std::string& key) const {
        const auto s = str(key);
        if (!s) return std::nullopt;
        return to_double(*s, key);
    }

    std::optional<long long> integer(const std::string& key) const {
        const auto s = str(key);
        if (!s) return std::nullopt;
        long long v = 0;
        const auto r = std::from_chars(s->data(), s->data() + s->size(), v);
        if (r.ec != std::errc() || r.ptr != s->data() + s->size()) bad(key, "expected an integer, got '" + *s + "'");
        return v;
    }

    std::optional<std::vector<double>> list(const std::string& key) const {
        const auto s = str(key);
        if (!s) return std::nullopt;
        std::vector<double> out;
        std::stringstream ss(*s);
        for (std::string item; std::getline(ss, item, ',');) out.push_back(to_double(trim(item), key));
        if (out.empty()) bad(key, "empty list");
        return out;
    }

    std::optional<std::vector<std::string>> words(const std::string& key) const {
        const auto s = str(key);
        if (!s) return std::nullopt;
        std::vector<std::string> out;
        std::stringstream ss(*s);
        for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
        return out;
    }

    /// Parameter error naming the key and its line.
    [[noreturn]] void bad(const std::string& key, const std::string& msg) const {
        const auto it = entries_.find(key);
        if (it != entries_.end()) fail(it->second.line, key + ": " + msg);
        throw parameter_error(origin_ + ": " + key + ": " + msg);
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

private:
    static bool valid_name(const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
    }
    double to_double(const std::string& s, const std::string& key) const {
        double v = 0.0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(key, "expected a number, got '" + s + "'");
        return v;
    }
    [[noreturn]] void fail(int line, const std::string& msg) const {
        throw parameter_error(origin_ + " line " + std::to_string(line) + ": " + msg);
    }

    std::string origin_;
    std::string text_;
    std::map<std::string, ConfigEntry> entries_;
};

/// Git blob id: sha1("blob <size>\0" + content), lowercase hex.
inline std::string git_blob_hash(const std::string& content) {
    const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, head.data(), head.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw numerical_error("sha1 failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

}  // namespace sgrushin
