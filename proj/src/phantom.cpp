#include "gage/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include "gage/errors.hpp"
#include "gage/pgm.hpp"

namespace fs = std::filesystem;

namespace gage {

std::string to_string(View v) {
    switch (v) {
        case View::axial: return "axial";
        case View::sagittal: return "sagittal";
        default: return "coronal";
    }
}

View view_from_string(const std::string& s) {
    if (s == "axial") return View::axial;
    if (s == "sagittal") return View::sagittal;
    if (s == "coronal") return View::coronal;
    throw ConfigError("unknown view '" + s + "' (expected axial, sagittal or coronal)");
}

std::string to_string(SplitTag s) {
    switch (s) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        default: return "test";
    }
}

SplitTag split_from_string(const std::string& s) {
    if (s == "train") return SplitTag::train;
    if (s == "val") return SplitTag::val;
    if (s == "test") return SplitTag::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// sin/cos with fixed polynomial coefficients: libm implementations differ
// across platforms, and the dataset golden hash must not.
double det_sin(double x) {
    const double k = std::floor(x / (2.0 * kPi) + 0.5);
    x -= k * (2.0 * kPi);
    if (x > kPi / 2.0) x = kPi - x;
    if (x < -kPi / 2.0) x = -kPi - x;
    const double x2 = x * x;
    // Taylor to x^13; max error ~7e-10 on [-pi/2, pi/2]
    return x * (1.0 +
                x2 * (-1.0 / 6.0 +
                      x2 * (1.0 / 120.0 +
                            x2 * (-1.0 / 5040.0 +
                                  x2 * (1.0 / 362880.0 +
                                        x2 * (-1.0 / 39916800.0 + x2 / 6227020800.0))))));
}

double det_cos(double x) { return det_sin(x + kPi / 2.0); }

// Intensity palette (gray levels before noise).
constexpr double kBackground = 20.0;
constexpr double kRingLevel = 90.0;
constexpr double kBrainBase = 150.0;
constexpr double kBandAmplitude = 55.0;
constexpr double kNoiseSigma = 8.0;

constexpr uint64_t kSubjectStream = 3;  // view indices use 0..2
constexpr uint64_t kSplitStream = 4;

}  // namespace

PhantomImage generate_phantom(double age_days, View view, SplitMix64& rng, int canvas) {
    if (!(age_days >= kAgeMinDays && age_days <= kAgeMaxDays))
        throw ConfigError("age " + std::to_string(age_days) + " outside [" +
                          std::to_string(kAgeMinDays) + "," + std::to_string(kAgeMaxDays) + "]");
    if (canvas < 32) throw ConfigError("canvas must be at least 32 px");

    const double S = double(canvas);
    const double t = (age_days - kAgeMinDays) / (kAgeMaxDays - kAgeMinDays);

    // Brain geometry. Aspect redistributes the radius between the axes so
    // the rendered area follows the same affine-in-age law for every view.
    const double mean_radius = (0.10 + 0.12 * t) * S;
    const double aspect = view == View::axial ? 1.0 : (view == View::sagittal ? 1.3 : 0.8);
    const double semi_a = mean_radius * std::sqrt(aspect);
    const double semi_b = mean_radius / std::sqrt(aspect);
    const double band_cycles = 3.0 + 6.0 * t;

    // Draw order is part of the format: theta, center, phase, ring, clutter,
    // then per-pixel noise.
    const double theta = rng.uniform(0.0, kPi);
    const double margin = std::max(semi_a, semi_b) + 2.0;
    const double cy = rng.uniform(margin, S - 1.0 - margin);
    const double cx = rng.uniform(margin, S - 1.0 - margin);
    const double phase = double(int(view)) * (2.0 * kPi / 3.0) + rng.uniform(0.0, 2.0 * kPi);

    const double ring_cy = S * 0.5 + rng.uniform(-0.03, 0.03) * S;
    const double ring_cx = S * 0.5 + rng.uniform(-0.03, 0.03) * S;
    const double ring_r = (0.44 + rng.uniform(-0.02, 0.02)) * S;
    const double ring_halfwidth = 0.0175 * S;

    struct Blob {
        double y, x, r, level;
    };
    std::vector<Blob> blobs;
    const int n_blobs = rng.uniform_int(3, 6);
    const double keepout = std::max(semi_a, semi_b) + 2.0;
    for (int i = 0; i < n_blobs; ++i) {
        const double br = rng.uniform(0.03, 0.07) * S;
        const double level = rng.uniform(110.0, 190.0);
        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            const double by = rng.uniform(br, S - 1.0 - br);
            const double bx = rng.uniform(br, S - 1.0 - br);
            const double dy = by - cy, dx = bx - cx;
            if (std::sqrt(dy * dy + dx * dx) > keepout + br + 2.0) {
                blobs.push_back({by, bx, br, level});
                placed = true;
            }
        }
    }

    const double ct = det_cos(theta), st = det_sin(theta);
    std::vector<double> buf(size_t(canvas) * canvas, kBackground);
    int r_lo = canvas, r_hi = -1, c_lo = canvas, c_hi = -1;

    for (int r = 0; r < canvas; ++r) {
        for (int c = 0; c < canvas; ++c) {
            double v = kBackground;
            const double py = double(r), px = double(c);

            const double rdy = py - ring_cy, rdx = px - ring_cx;
            const double ring_d = std::sqrt(rdy * rdy + rdx * rdx);
            if (ring_d > ring_r - ring_halfwidth && ring_d < ring_r + ring_halfwidth)
                v = kRingLevel;

            for (const Blob& b : blobs) {
                const double dy = py - b.y, dx = px - b.x;
                if (dy * dy + dx * dx <= b.r * b.r) v = b.level;
            }

            // Elliptical radius in the brain's rotated frame.
            const double dy = py - cy, dx = px - cx;
            const double u = (dx * ct + dy * st) / semi_a;
            const double w = (-dx * st + dy * ct) / semi_b;
            const double rho2 = u * u + w * w;
            if (rho2 <= 1.0) {
                const double rho = std::sqrt(rho2);
                v = kBrainBase + kBandAmplitude * det_sin(2.0 * kPi * band_cycles * rho + phase);
                r_lo = std::min(r_lo, r);
                r_hi = std::max(r_hi, r);
                c_lo = std::min(c_lo, c);
                c_hi = std::max(c_hi, c);
            }
            buf[size_t(r) * canvas + c] = v;
        }
    }

    PhantomImage out;
    out.image = ImageU8(canvas, canvas);
    for (size_t i = 0; i < buf.size(); ++i) {
        const double noisy = buf[i] + kNoiseSigma * rng.normal();
        const double clamped = std::min(255.0, std::max(0.0, noisy));
        out.image.v[i] = uint8_t(std::lround(clamped));
    }
    if (r_hi < 0) throw NumericError("phantom rendered no brain pixels (internal)");
    out.gt_box = Box{r_lo, c_lo, r_hi, c_hi, BoxSpace::image};
    return out;
}

std::string Manifest::resolve(const Sample& s) const {
    if (dir.empty()) return s.image_path;
    return (fs::path(dir) / s.image_path).string();
}

void Manifest::write(const std::string& path) const {
    std::string out = "sample_id,view,age_days,split,image_path,box_r0,box_c0,box_r1,box_c1\n";
    char line[512];
    for (const Sample& s : rows) {
        std::snprintf(line, sizeof(line), "%d,%s,%.6f,%s,%s,%d,%d,%d,%d\n", s.sample_id,
                      to_string(s.view).c_str(), s.age_days, to_string(s.split).c_str(),
                      s.image_path.c_str(), s.gt_box.r0, s.gt_box.c0, s.gt_box.r1, s.gt_box.c1);
        out += line;
    }
    write_file_bytes(path, out.data(), out.size());
}

Manifest Manifest::read(const std::string& path, bool check_files) {
    auto bytes = read_file_bytes(path);
    std::string text(bytes.begin(), bytes.end());
    Manifest m;
    m.dir = fs::path(path).parent_path().string();

    size_t pos = 0;
    int lineno = 0;
    auto next_line = [&](std::string& line) -> bool {
        if (pos >= text.size()) return false;
        const size_t nl = text.find('\n', pos);
        line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++lineno;
        return true;
    };

    std::string line;
    if (!next_line(line) ||
        line != "sample_id,view,age_days,split,image_path,box_r0,box_c0,box_r1,box_c1")
        throw IoError(path + ": bad or missing manifest header");
    std::set<std::pair<int, int>> seen;
    while (next_line(line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        size_t p = 0;
        while (true) {
            const size_t comma = line.find(',', p);
            f.push_back(line.substr(p, comma == std::string::npos ? std::string::npos : comma - p));
            if (comma == std::string::npos) break;
            p = comma + 1;
        }
        if (f.size() != 9)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 9 fields, got " +
                          std::to_string(f.size()));
        Sample s;
        try {
            s.sample_id = std::stoi(f[0]);
            s.view = view_from_string(f[1]);
            s.age_days = std::stod(f[2]);
            s.split = split_from_string(f[3]);
            s.image_path = f[4];
            s.gt_box = Box{std::stoi(f[5]), std::stoi(f[6]), std::stoi(f[7]), std::stoi(f[8]),
                           BoxSpace::image};
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert({s.sample_id, int(s.view)}).second)
            throw IoError(path + ":" + std::to_string(lineno) + ": duplicate sample_id " +
                          std::to_string(s.sample_id) + " for view " + to_string(s.view));
        if (check_files && !fs::exists(m.dir.empty() ? s.image_path
                                                     : (fs::path(m.dir) / s.image_path).string()))
            throw IoError(path + ":" + std::to_string(lineno) + ": referenced file '" +
                          s.image_path + "' does not exist");
        m.rows.push_back(std::move(s));
    }
    return m;
}

void split_dataset(Manifest& manifest, double f_train, double f_val, double f_test,
                   uint64_t seed) {
    if (f_train < 0 || f_val < 0 || f_test < 0 ||
        std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw ConfigError("split fractions must be nonnegative and sum to 1");

    std::vector<int> subjects;
    for (const Sample& s : manifest.rows)
        if (subjects.empty() || subjects.back() != s.sample_id) subjects.push_back(s.sample_id);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

    SplitMix64 rng(stream_seed(seed, 0, kSplitStream));
    for (size_t i = subjects.size(); i > 1; --i) {
        const size_t j = size_t(rng.uniform_int(0, int(i - 1)));
        std::swap(subjects[i - 1], subjects[j]);
    }

    const int n = int(subjects.size());
    const int n_train = int(std::floor(f_train * n));
    const int n_val = int(std::floor(f_val * n));
    std::vector<std::pair<int, SplitTag>> assign;
    for (int i = 0; i < n; ++i) {
        const SplitTag tag = i < n_train            ? SplitTag::train
                             : i < n_train + n_val  ? SplitTag::val
                                                    : SplitTag::test;
        assign.push_back({subjects[size_t(i)], tag});
    }
    std::sort(assign.begin(), assign.end());
    for (Sample& s : manifest.rows) {
        const auto it = std::lower_bound(
            assign.begin(), assign.end(), s.sample_id,
            [](const std::pair<int, SplitTag>& a, int id) { return a.first < id; });
        s.split = it->second;
    }
}

Manifest generate_dataset(int n_subjects, uint64_t seed, const std::string& out_dir,
                          const Profile& profile) {
    if (n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

    Manifest m;
    m.dir = out_dir;
    for (int id = 0; id < n_subjects; ++id) {
        SplitMix64 subject_rng(stream_seed(seed, uint64_t(id), kSubjectStream));
        const double age = subject_rng.uniform(kAgeMinDays, kAgeMaxDays);
        for (View view : {View::axial, View::sagittal, View::coronal}) {
            SplitMix64 rng(stream_seed(seed, uint64_t(id), uint64_t(view)));
            PhantomImage ph = generate_phantom(age, view, rng, profile.input_size);
            char name[64];
            std::snprintf(name, sizeof(name), "img_%05d_%s.pgm", id, to_string(view).c_str());
            write_pgm(ph.image, (fs::path(out_dir) / name).string());
            Sample s;
            s.sample_id = id;
            s.view = view;
            s.age_days = age;
            s.image_path = name;
            s.gt_box = ph.gt_box;
            m.rows.push_back(std::move(s));
        }
    }
    split_dataset(m, 0.7, 0.1, 0.2, seed);
    m.write((fs::path(out_dir) / "manifest.csv").string());
    return m;
}

}  // namespace gage
