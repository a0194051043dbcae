#include "xmad/dataset.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "xmad/cmft.hpp"
#include "xmad/error.hpp"
#include "xmad/extractor.hpp"
#include "xmad/fsutil.hpp"

namespace fs = std::filesystem;

namespace xmad::dataset {
namespace {

cv::Mat read_image(const fs::path& path, int flags) {
    if (!fs::exists(path)) fail(ErrorKind::Lookup, "missing file " + path.string());
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) fail(ErrorKind::Format, "cannot decode image " + path.string());
    return m;
}

void write_image(const cv::Mat& image, const fs::path& path, const std::vector<int>& params = {}) {
    std::vector<unsigned char> bytes;
    if (!cv::imencode(path.extension().string(), image, bytes, params)) {
        fail(ErrorKind::Io, "cannot encode " + path.string());
    }
    write_atomically(path, [&](std::ostream& out) {
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    });
}

template <typename Grid>
Grid from_mat(const cv::Mat& rgb32f) {
    Grid g(static_cast<std::size_t>(rgb32f.rows), static_cast<std::size_t>(rgb32f.cols));
    for (int r = 0; r < rgb32f.rows; ++r) {
        const auto* row = rgb32f.ptr<cv::Vec3f>(r);
        for (int c = 0; c < rgb32f.cols; ++c) {
            auto px = g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            for (int ch = 0; ch < 3; ++ch) px[static_cast<std::size_t>(ch)] = row[c][ch];
        }
    }
    return g;
}

cv::Mat to_mat(const PixelGrid& g) {
    cv::Mat m(static_cast<int>(g.height()), static_cast<int>(g.width()), CV_32FC3);
    for (std::size_t r = 0; r < g.height(); ++r) {
        auto* row = m.ptr<cv::Vec3f>(static_cast<int>(r));
        for (std::size_t c = 0; c < g.width(); ++c) {
            auto px = g.at(r, c);
            row[c] = cv::Vec3f(px[0], px[1], px[2]);
        }
    }
    return m;
}

bool present(const fs::path& p) { return !p.empty() && fs::exists(p); }

}  // namespace

SampleId parse_id(std::string_view id) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : id) {
        if (ch == '/') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    if (parts.size() != 4 || std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); })) {
        fail(ErrorKind::Data, "sample id '" + std::string(id) + "' is not <class>/<split>/<defect>/<stem>");
    }
    return {parts[0], parts[1], parts[2], parts[3]};
}

RgbImage read_rgb(const fs::path& path) {
    cv::Mat bgr = read_image(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage img(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols));
    for (int r = 0; r < rgb.rows; ++r) {
        const auto* row = rgb.ptr<cv::Vec3b>(r);
        for (int c = 0; c < rgb.cols; ++c) {
            auto px = img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            for (int ch = 0; ch < 3; ++ch) px[static_cast<std::size_t>(ch)] = static_cast<float>(row[c][ch]) / 255.0f;
        }
    }
    return img;
}

void write_rgb(const RgbImage& image, const fs::path& path) {
    cv::Mat m(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3);
    for (std::size_t r = 0; r < image.height(); ++r) {
        auto* row = m.ptr<cv::Vec3b>(static_cast<int>(r));
        for (std::size_t c = 0; c < image.width(); ++c) {
            auto px = image.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(static_cast<double>(px[static_cast<std::size_t>(ch)]), 0.0, 1.0);
                // Stored in BGR order.
                row[c][2 - ch] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    write_image(m, path);
}

StructuredPointCloud read_xyz(const fs::path& path) {
    cv::Mat m = read_image(path, cv::IMREAD_UNCHANGED);
    require(m.type() == CV_32FC3, ErrorKind::Format, path.string() + " is not a 3-channel float32 image");
    cv::Mat xyz;
    cv::cvtColor(m, xyz, cv::COLOR_BGR2RGB);
    auto pc = from_mat<StructuredPointCloud>(xyz);
    for (float v : pc.data()) require(std::isfinite(v), ErrorKind::Value, path.string() + " holds non-finite coordinates");
    return pc;
}

void write_xyz(const StructuredPointCloud& pc, const fs::path& path) {
    cv::Mat bgr;
    cv::cvtColor(to_mat(pc), bgr, cv::COLOR_RGB2BGR);
    // The encoder defaults to lossy SGILOG for float data.
    write_image(bgr, path, {cv::IMWRITE_TIFF_COMPRESSION, 1});
}

Mask read_mask(const fs::path& path) {
    cv::Mat m = read_image(path, cv::IMREAD_GRAYSCALE);
    Mask mask(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
    for (int r = 0; r < m.rows; ++r) {
        const auto* row = m.ptr<unsigned char>(r);
        for (int c = 0; c < m.cols; ++c) mask.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = row[c] > 0 ? 1 : 0;
    }
    return mask;
}

void write_mask(const Mask& mask, const fs::path& path) {
    cv::Mat m(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8UC1);
    for (std::size_t r = 0; r < mask.height; ++r) {
        auto* row = m.ptr<unsigned char>(static_cast<int>(r));
        for (std::size_t c = 0; c < mask.width; ++c) row[c] = mask.at(r, c) ? 255 : 0;
    }
    write_image(m, path);
}

void write_score_png(const ScoreMap& map, const fs::path& path, double lo, double hi) {
    cv::Mat m(static_cast<int>(map.rows), static_cast<int>(map.cols), CV_8UC1);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t r = 0; r < map.rows; ++r) {
        auto* row = m.ptr<unsigned char>(static_cast<int>(r));
        for (std::size_t c = 0; c < map.cols; ++c) {
            const double v = std::clamp((map.at(r, c) - lo) / span, 0.0, 1.0);
            row[c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    write_image(m, path);
}

RgbImage resize_rgb(const RgbImage& image, std::size_t size) {
    if (image.height() == size && image.width() == size) return image;
    cv::Mat out;
    cv::resize(to_mat(image), out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    return from_mat<RgbImage>(out);
}

StructuredPointCloud resize_xyz(const StructuredPointCloud& pc, std::size_t size) {
    if (pc.height() == size && pc.width() == size) return pc;
    cv::Mat out;
    cv::resize(to_mat(pc), out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    return from_mat<StructuredPointCloud>(out);
}

Mask resize_mask(const Mask& mask, std::size_t size) {
    if (mask.height == size && mask.width == size) return mask;
    cv::Mat in(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8UC1, const_cast<std::uint8_t*>(mask.data.data()));
    cv::Mat out;
    cv::resize(in, out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    Mask m(size, size);
    std::copy(out.datastart, out.dataend, m.data.begin());
    return m;
}

fs::path rgb_path(const fs::path& root, const SampleId& id) {
    return root / id.class_name / id.split / id.defect / "rgb" / (id.stem + ".png");
}
fs::path xyz_path(const fs::path& root, const SampleId& id) {
    return root / id.class_name / id.split / id.defect / "xyz" / (id.stem + ".tiff");
}
fs::path gt_path(const fs::path& root, const SampleId& id) {
    return root / id.class_name / id.split / id.defect / "gt" / (id.stem + ".png");
}

std::vector<std::string> list_classes(const fs::path& root) {
    require(fs::is_directory(root), ErrorKind::Lookup, "dataset root " + root.string() + " is not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && (fs::is_directory(e.path() / "train") || fs::is_directory(e.path() / "test"))) {
            out.push_back(e.path().filename().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<SampleFiles> scan(const fs::path& root, const std::string& class_name, const std::string& split) {
    const fs::path split_dir = root / class_name / split;
    require(fs::is_directory(split_dir), ErrorKind::Lookup, "missing split directory " + split_dir.string());
    std::set<std::string> ids;
    auto collect = [&](const fs::path& dir, const std::string& defect, const std::string& ext) {
        if (!fs::is_directory(dir)) return;
        for (const auto& f : fs::directory_iterator(dir)) {
            if (f.is_regular_file() && f.path().extension() == ext) {
                ids.insert(class_name + "/" + split + "/" + defect + "/" + f.path().stem().string());
            }
        }
    };
    for (const auto& d : fs::directory_iterator(split_dir)) {
        if (!d.is_directory()) continue;
        const std::string defect = d.path().filename().string();
        collect(d.path() / "rgb", defect, ".png");
        collect(d.path() / "xyz", defect, ".tiff");
        collect(d.path() / "feat" / "rgb", defect, ".cmft");
        collect(d.path() / "feat" / "pc", defect, ".cmft");
    }
    std::vector<SampleFiles> out;
    for (const auto& id : ids) {
        const SampleId sid = parse_id(id);
        SampleFiles f{id, rgb_path(root, sid), xyz_path(root, sid), gt_path(root, sid)};
        if (!fs::exists(f.rgb)) f.rgb.clear();
        if (!fs::exists(f.xyz)) f.xyz.clear();
        if (!fs::exists(f.gt)) f.gt.clear();
        out.push_back(std::move(f));
    }
    return out;
}

Sample load_sample(const fs::path& root, const SampleFiles& files, const LoadOptions& options) {
    const SampleId sid = parse_id(files.id);
    Sample s;
    s.id = files.id;
    if (options.raw) {
        if (present(files.rgb)) s.rgb = read_rgb(files.rgb);
        if (present(files.xyz)) s.pc = read_xyz(files.xyz);
        if (s.rgb && s.pc) {
            require(s.rgb->height() == s.pc->height() && s.rgb->width() == s.pc->width(), ErrorKind::Shape,
                    "sample '" + s.id + "': RGB and point cloud differ in size");
        }
    }
    if (options.features) {
        for (Modality m : {Modality::Rgb, Modality::Pc}) {
            const fs::path p = extractor::feature_path(root, m, s.id);
            if (fs::exists(p)) s.features(m) = cmft::load(p);
        }
    }
    if (sid.split == "train") {
        s.label = Label::Normal;
    } else if (sid.split == "test") {
        s.label = sid.defect == "good" ? Label::Normal : Label::Anomalous;
        if (present(files.gt)) {
            s.gt_mask = read_mask(files.gt);
        } else {
            std::size_t h = 0, w = 0;
            if (s.rgb) {
                h = s.rgb->height();
                w = s.rgb->width();
            } else if (s.pc) {
                h = s.pc->height();
                w = s.pc->width();
            } else if (present(files.rgb)) {
                const cv::Mat m = read_image(files.rgb, cv::IMREAD_COLOR);
                h = static_cast<std::size_t>(m.rows);
                w = static_cast<std::size_t>(m.cols);
            }
            require(s.label == Label::Normal, ErrorKind::Data, "anomalous test sample '" + s.id + "' has no mask");
            require(h > 0, ErrorKind::Data, "cannot size the empty mask of '" + s.id + "' without a raw image");
            s.gt_mask = Mask(h, w);
        }
    }
    validate_sample(s);
    return s;
}

std::vector<Sample> load_split(const fs::path& root, const std::string& class_name, const std::string& split,
                               const LoadOptions& options) {
    std::vector<Sample> out;
    for (const auto& f : scan(root, class_name, split)) out.push_back(load_sample(root, f, options));
    return out;
}

void write_features(const fs::path& root, Modality modality, const std::string& id, const FeatureMap& map,
                    const std::string& source_checksum) {
    const fs::path path = extractor::feature_path(root, modality, id);
    cmft::save(map, path);
    fs::path sidecar = path;
    sidecar.replace_extension(".json");
    const nlohmann::json j = {{"id", id},
                              {"modality", to_string(modality)},
                              {"rows", map.rows()},
                              {"cols", map.cols()},
                              {"dim", map.dim()},
                              {"source_checksum", source_checksum}};
    write_text(sidecar, j.dump(2) + "\n");
}

void write_sample(const fs::path& root, const Sample& sample) {
    const SampleId sid = parse_id(sample.id);
    if (sample.rgb) write_rgb(*sample.rgb, rgb_path(root, sid));
    if (sample.pc) write_xyz(*sample.pc, xyz_path(root, sid));
    if (sample.gt_mask) write_mask(*sample.gt_mask, gt_path(root, sid));
    for (Modality m : {Modality::Rgb, Modality::Pc}) {
        if (!sample.features(m)) continue;
        const fs::path raw = m == Modality::Rgb ? rgb_path(root, sid) : xyz_path(root, sid);
        write_features(root, m, sample.id, *sample.features(m), fs::exists(raw) ? file_checksum(raw) : "");
    }
}

}  // namespace xmad::dataset
