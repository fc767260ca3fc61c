/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <driftforge/error.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace driftforge::csv {

/// One parsed CSV document. `lines[i]` is the 1-based source line where record i starts.
struct Document {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> lines;
};

/// RFC-4180 parser: quoted fields, doubled quotes, embedded separators and newlines, CRLF.
inline Document parse(std::string_view text) {
    Document doc;
    std::vector<std::string> record;
    std::string field;
    bool inQuotes = false;
    bool fieldQuoted = false;
    bool recordHasContent = false;
    std::size_t line = 1;
    std::size_t recordLine = 1;
    bool haveHeader = false;

    auto endRecord = [&]() {
        record.push_back(std::move(field));
        field.clear();
        fieldQuoted = false;
        if (!haveHeader) {
            doc.header = std::move(record);
            haveHeader = true;
        } else {
            doc.records.push_back(std::move(record));
            doc.lines.push_back(recordLine);
        }
        record.clear();
        recordHasContent = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (inQuotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    inQuotes = false;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty() || fieldQuoted) {
                    failInput("csv: stray quote at line " + std::to_string(line));
                }
                inQuotes = true;
                fieldQuoted = true;
                recordHasContent = true;
                break;
            case ',':
                record.push_back(std::move(field));
                field.clear();
                fieldQuoted = false;
                recordHasContent = true;
                break;
            case '\r': break;
            case '\n':
                if (recordHasContent || !field.empty()) {
                    endRecord();
                }
                ++line;
                recordLine = line;
                break;
            default:
                if (fieldQuoted) {
                    failInput("csv: text after closing quote at line " + std::to_string(line));
                }
                field.push_back(c);
                recordHasContent = true;
        }
    }
    if (inQuotes) {
        failInput("csv: unterminated quoted field starting near line " + std::to_string(recordLine));
    }
    if (recordHasContent || !field.empty()) {
        endRecord();
    }
    if (!haveHeader) {
        failInput("csv: missing header row");
    }
    return doc;
}

inline std::string readFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        failInput("cannot open file: " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline Document read(const std::string& path) { return parse(readFile(path)); }

inline std::string quote(std::string_view field) {
    const bool needsQuotes = field.find_first_of(",\"\r\n") != std::string_view::npos
        || (!field.empty() && (field.front() == ' ' || field.back() == ' '));
    if (!needsQuotes) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void writeRecord(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << quote(fields[i]);
    }
    out << '\n';
}

}// namespace driftforge::csv
