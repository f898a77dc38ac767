#include "promptfolio/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "promptfolio/errors.hpp"

namespace promptfolio {

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

int sanitize_nonfinite(nlohmann::json& j) {
    int n = 0;
    if (j.is_number_float()) {
        if (!std::isfinite(j.get<double>())) {
            j = "nan";
            ++n;
        }
    } else if (j.is_structured()) {
        for (auto& v : j) n += sanitize_nonfinite(v);
    }
    return n;
}

std::optional<nlohmann::json> read_json_if_exists(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error&) {
        return std::nullopt;  // a torn file counts as missing; the point is recomputed
    }
}

}  // namespace promptfolio
