#pragma once

#include <string>
#include <vector>

#include "gage/attention.hpp"
#include "gage/backbone.hpp"
#include "gage/image.hpp"
#include "gage/rng.hpp"

namespace gage {

enum class View { axial = 0, sagittal = 1, coronal = 2 };
enum class SplitTag { train, val, test };

std::string to_string(View v);
View view_from_string(const std::string& s);
std::string to_string(SplitTag s);
SplitTag split_from_string(const std::string& s);

constexpr double kAgeMinDays = 125.0;
constexpr double kAgeMaxDays = 273.0;

struct Sample {
    int sample_id = 0;
    View view = View::axial;
    double age_days = 0.0;
    SplitTag split = SplitTag::train;
    std::string image_path;  // relative to the manifest directory
    Box gt_box;              // image space, tight around the brain ellipse
};

// CSV index of a generated dataset. Columns, in order:
// sample_id,view,age_days,split,image_path,box_r0,box_c0,box_r1,box_c1
struct Manifest {
    std::vector<Sample> rows;
    std::string dir;  // directory the manifest was read from / written to

    std::string resolve(const Sample& s) const;
    void write(const std::string& path) const;
    static Manifest read(const std::string& path, bool check_files = true);
};

struct PhantomImage {
    ImageU8 image;
    Box gt_box;
};

// Renders one age-labeled brain phantom: elliptical brain with radial
// age-frequency banding, a surrounding maternal ring, clutter blobs in the
// brain's intensity range, and Gaussian pixel noise. All math is IEEE double
// with in-house trig, so output bytes are platform-stable.
PhantomImage generate_phantom(double age_days, View view, SplitMix64& rng, int canvas);

// Writes n_subjects x 3 views of PGMs plus manifest.csv (with subject-level
// 70/10/20 splits) under out_dir. Pure function of (seed, profile).
Manifest generate_dataset(int n_subjects, uint64_t seed, const std::string& out_dir,
                          const Profile& profile);

// Subject-level split assignment; all views of a subject share a split.
// Counts: floor(train), floor(val), remainder to test.
void split_dataset(Manifest& manifest, double f_train, double f_val, double f_test,
                   uint64_t seed);

}  // namespace gage
