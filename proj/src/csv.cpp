#include "kkl/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace kkl {

int CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows,
               const std::string& comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for writing: " + path);
    std::string line;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) line += ',';
        line += header[i];
    }
    line += '\n';
    out << line;
    for (const auto& row : rows) {
        line.clear();
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) line += ',';
            line += format_double(row[i]);
        }
        line += '\n';
        out << line;
    }
    if (!comment.empty()) out << "# " << comment << '\n';
    if (!out) throw InputError("write failed: " + path);
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open for reading: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.header.push_back(cell);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<double> row;
        row.reserve(table.header.size());
        const char* p = line.c_str();
        const char* end = p + line.size();
        while (p <= end) {
            const char* comma = p;
            while (comma < end && *comma != ',') ++comma;
            double v = 0.0;
            auto res = std::from_chars(p, comma, v);
            if (res.ec != std::errc())
                throw InputError("bad numeric cell in " + path + ": " +
                                 std::string(p, comma));
            row.push_back(v);
            if (comma == end) break;
            p = comma + 1;
        }
        if (row.size() != table.header.size())
            throw InputError("ragged CSV row in " + path);
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << content;
    if (!out) throw InputError("write failed: " + path);
}

}  // namespace kkl
