#pragma once

// Sequence directories: frame_00000.ppm ..., timestamps.txt (one microsecond
// value per line) and optionally events.evt1.

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "evfi/eval.hpp"

namespace evfi {

inline std::filesystem::path frame_path(const std::filesystem::path& dir, std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.ppm", i);
    return dir / name;
}

inline std::vector<std::uint64_t> read_timestamps(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::istringstream is(text);
    std::vector<std::uint64_t> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty()) continue;
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc() || ptr != line.data() + line.size()) {
            throw DataError(path.string() + ": line " + std::to_string(lineno) + " is not a timestamp: '" + line + "'");
        }
        out.push_back(v);
    }
    return out;
}

inline std::string format_timestamps(const std::vector<std::uint64_t>& ts) {
    std::string out;
    for (std::uint64_t t : ts) out += std::to_string(t) + "\n";
    return out;
}

/// Reads frames and timestamps; events when `events.evt1` exists, otherwise an
/// empty stream over the sequence span.
inline FrameSequence read_sequence(const std::filesystem::path& dir) {
    FrameSequence seq;
    seq.timestamps = read_timestamps(dir / "timestamps.txt");
    if (seq.timestamps.empty()) throw DataError((dir / "timestamps.txt").string() + ": no timestamps");
    for (std::size_t i = 0; i < seq.timestamps.size(); ++i) seq.frames.push_back(read_image(frame_path(dir, i)));
    seq.validate();
    const auto ev_path = dir / "events.evt1";
    if (std::filesystem::exists(ev_path)) {
        seq.events = read_events(ev_path);
        if (seq.events.width() != seq.frames[0].width() || seq.events.height() != seq.frames[0].height()) {
            throw DataError(ev_path.string() + ": sensor size differs from the frames");
        }
        if (seq.events.t_start() > seq.timestamps.front() || seq.events.t_end() < seq.timestamps.back()) {
            throw DataError(ev_path.string() + ": event window does not cover the frame timestamps");
        }
    } else {
        seq.events = EventStream(seq.frames[0].width(), seq.frames[0].height(), seq.timestamps.front(),
                                 seq.timestamps.back());
    }
    return seq;
}

inline void write_sequence(const std::filesystem::path& dir, const FrameSequence& seq) {
    seq.validate();
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < seq.frames.size(); ++i) write_image(frame_path(dir, i), seq.frames[i]);
    write_text_file(dir / "timestamps.txt", format_timestamps(seq.timestamps));
    write_events(dir / "events.evt1", seq.events);
}

}  // namespace evfi
