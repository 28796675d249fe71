#pragma once

#include <filesystem>
#include <string>

namespace testutil {

// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path temp_dir(const std::string& name) {
    std::filesystem::path p = std::filesystem::current_path() / "test_tmp" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testutil
