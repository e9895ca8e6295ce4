#include "tempofuse/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "tempofuse/errors.hpp"

namespace tempofuse {
namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

// Strip a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        if (cfg.values_.count(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        cfg.values_[key] = trim(line.substr(eq + 1));
        cfg.lines_[key] = lineno;
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    const std::string v = it == values_.end() ? fallback : unquote(it->second);
    resolved_[key] = v;
    return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
    std::ostringstream def;
    def.precision(17);
    def << fallback;
    const std::string s = get_string(key, def.str());
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": field '" + key + "' expects a number, got '" + s + "'");
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) {
    const std::string s = get_string(key, std::to_string(fallback));
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": field '" + key + "' expects an integer, got '" + s + "'");
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
    std::string s = get_string(key, fallback ? "true" : "false");
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(origin_ + ": field '" + key + "' expects a boolean, got '" + s + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::string>& fallback) {
    std::string joined;
    for (std::size_t i = 0; i < fallback.size(); ++i) joined += (i ? ", " : "") + fallback[i];
    std::string s = trim(get_string(key, joined));
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = unquote(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void KeyValueConfig::reject_unused() const {
    std::string unknown;
    for (const auto& [key, _] : values_)
        if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key + " (line " + std::to_string(lines_.at(key)) + ")";
    if (!unknown.empty()) throw ConfigError(origin_ + ": unknown field(s): " + unknown);
}

std::string KeyValueConfig::echo() const {
    std::ostringstream os;
    for (const auto& [key, value] : resolved_) os << key << " = " << value << '\n';
    return os.str();
}

}  // namespace tempofuse
