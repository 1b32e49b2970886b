#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace moediff {

/// Minimal CSV writer with deterministic number formatting: doubles are
/// printed with %.17g so values round-trip and reruns are byte-identical.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    void begin_row();
    CsvWriter& field(const std::string& s);
    CsvWriter& field(double v);
    CsvWriter& field(std::int64_t v);
    CsvWriter& field(int v) { return field(static_cast<std::int64_t>(v)); }
    void end_row();

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
    std::ofstream out_;
    bool first_field_ = true;
};

std::string format_double(double v);

/// Tiny CSV reader: splits on commas, no quoting (none of our schemas quote).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);

}  // namespace moediff
