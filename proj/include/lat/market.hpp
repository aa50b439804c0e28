#pragma once

#include <string>
#include <vector>

namespace lat {

enum class Split { train, query, gallery };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::query: return "query";
        default: return "gallery";
    }
}

// One dataset image. camera_id >= 1 for parsed real data.
struct ImageRecord {
    std::string path;
    int person_id = 0;
    int camera_id = 0;
    Split split = Split::train;
};

// Parse of the pid_cNsM_frame_idx.ext naming convention.
struct MarketName {
    int person_id = 0;
    int camera_id = 0;
    int sequence_id = 0;
    bool junk = false;        // pid -1
    bool distractor = false;  // pid 0
};

// Parses "0002_c1s1_000451_03.jpg" style names. Throws FileParseError,
// naming the offending file, on anything that does not match.
MarketName parse_market_filename(const std::string& name);

// Scans one split directory (sorted order, deterministic). Junk images
// (pid -1) are skipped; distractors (pid 0) are kept for gallery splits.
std::vector<ImageRecord> scan_split_dir(const std::string& dir, Split split);

// Market-1501 style layout: bounding_box_train / query / bounding_box_test.
struct DatasetDirs {
    std::vector<ImageRecord> train, query, gallery;
};
DatasetDirs scan_market_layout(const std::string& root);

}  // namespace lat
