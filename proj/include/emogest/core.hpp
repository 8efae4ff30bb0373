#pragma once

// Domain types shared by every stage: skeletons, pose sequences, the
// head/transition/tail segment layout, emotion labels, training samples,
// and the binary pose-track file format.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emogest/audio.hpp"
#include "emogest/tensor.hpp"

namespace emogest {

// Exit-code mapped error categories (see the CLI).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};
struct MissingPrerequisiteError : std::runtime_error {
  explicit MissingPrerequisiteError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// skeleton and poses
// ---------------------------------------------------------------------------

struct SkeletonSpec {
  std::size_t joint_count = 0;
  std::vector<std::string> joint_names;
  std::vector<int> parent_index;  // -1 for the root
  double fps = 15.0;

  void validate() const {
    if (joint_count < 2) throw ValidationError("SkeletonSpec: need at least 2 joints");
    if (joint_names.size() != joint_count || parent_index.size() != joint_count)
      throw ValidationError("SkeletonSpec: names/parents must match joint_count");
    if (fps <= 0) throw ValidationError("SkeletonSpec: fps must be positive");
    std::size_t roots = 0;
    for (std::size_t j = 0; j < joint_count; ++j) {
      const int p = parent_index[j];
      if (p < 0) {
        ++roots;
        continue;
      }
      if (static_cast<std::size_t>(p) >= joint_count)
        throw ValidationError("SkeletonSpec: parent index out of range");
      // Walk to the root; a cycle would loop more than joint_count times.
      std::size_t steps = 0;
      int cur = p;
      while (cur >= 0) {
        cur = parent_index[static_cast<std::size_t>(cur)];
        if (++steps > joint_count) throw ValidationError("SkeletonSpec: parent graph has a cycle");
      }
    }
    if (roots != 1) throw ValidationError("SkeletonSpec: parent graph must have exactly one root");
  }

  // Small upper-body chain with two arms; used by the synthetic corpus.
  static SkeletonSpec desk_default(std::size_t joints = 8) {
    SkeletonSpec s;
    s.joint_count = joints;
    s.fps = 15.0;
    const std::vector<std::string> base = {"spine",  "chest",  "neck",   "head",
                                           "l_arm", "l_hand", "r_arm", "r_hand"};
    const std::vector<int> parents = {-1, 0, 1, 2, 1, 4, 1, 6};
    for (std::size_t j = 0; j < joints; ++j) {
      if (j < base.size()) {
        s.joint_names.push_back(base[j]);
        s.parent_index.push_back(parents[j]);
      } else {
        s.joint_names.push_back("joint" + std::to_string(j));
        s.parent_index.push_back(static_cast<int>(j - 1));
      }
    }
    return s;
  }
};

// World-space joint positions, frames x J x 3 (meters).
struct PoseSequence {
  Tensor data;  // {frames, J, 3}
  SkeletonSpec skeleton;

  PoseSequence() = default;
  PoseSequence(Tensor d, SkeletonSpec skel) : data(std::move(d)), skeleton(std::move(skel)) {
    if (data.rank() != 3 || data.dim(2) != 3)
      throw ValidationError("PoseSequence: data must be {frames, J, 3}");
    if (data.dim(1) != skeleton.joint_count)
      throw ValidationError("PoseSequence: joint count mismatch with skeleton");
  }

  std::size_t frames() const { return data.dim(0); }
  std::size_t joints() const { return data.dim(1); }

  // {frames, J*3} flattened view (copy).
  Tensor as_matrix() const { return data.reshaped({frames(), joints() * 3}); }

  static PoseSequence from_matrix(const Tensor& m, const SkeletonSpec& skel) {
    if (m.rank() != 2 || m.cols() != skel.joint_count * 3)
      throw ValidationError("PoseSequence::from_matrix: shape mismatch");
    return PoseSequence(m.reshaped({m.rows(), skel.joint_count, 3}), skel);
  }

  PoseSequence slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > frames()) throw ValidationError("PoseSequence::slice: bad range");
    Tensor out({end - begin, joints(), 3});
    const std::size_t stride = joints() * 3;
    std::copy(data.data() + begin * stride, data.data() + end * stride, out.data());
    return PoseSequence(std::move(out), skeleton);
  }

  void validate() const {
    if (frames() < 1) throw ValidationError("PoseSequence: need at least one frame");
    if (!data.all_finite()) throw ValidationError("PoseSequence: non-finite entries");
  }
};

// ---------------------------------------------------------------------------
// segment layout
// ---------------------------------------------------------------------------

struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

struct SegmentLayout {
  std::size_t head_frames = 60;
  std::size_t transition_frames = 30;
  std::size_t tail_frames = 60;

  std::size_t total() const { return head_frames + transition_frames + tail_frames; }

  void validate() const {
    if (head_frames == 0 || transition_frames == 0 || tail_frames == 0)
      throw ValidationError("SegmentLayout: all segments must be non-empty");
    if (transition_frames > head_frames || transition_frames > tail_frames)
      throw ValidationError("SegmentLayout: transition length must fit inside head and tail");
  }

  bool operator==(const SegmentLayout&) const = default;
};

struct SegmentSlices {
  FrameRange head, transition, tail;
};

struct ChunkRanges {
  FrameRange head_chunk, tail_chunk;
};

// Contiguous, disjoint head/transition/tail index ranges covering [0, total).
inline SegmentSlices segment_slices(const SegmentLayout& layout) {
  layout.validate();
  SegmentSlices s;
  s.head = {0, layout.head_frames};
  s.transition = {layout.head_frames, layout.head_frames + layout.transition_frames};
  s.tail = {s.transition.end, s.transition.end + layout.tail_frames};
  return s;
}

// Head chunk: last L frames of the head. Tail chunk: first L frames of the tail.
inline ChunkRanges chunk_ranges(const SegmentLayout& layout) {
  const SegmentSlices s = segment_slices(layout);
  const std::size_t L = layout.transition_frames;
  ChunkRanges c;
  c.head_chunk = {s.head.end - L, s.head.end};
  c.tail_chunk = {s.tail.begin, s.tail.begin + L};
  return c;
}

// ---------------------------------------------------------------------------
// emotions
// ---------------------------------------------------------------------------

struct EmotionLabel {
  int id = 0;
  std::string name;
  bool operator==(const EmotionLabel&) const = default;
};

class EmotionVocabulary {
 public:
  EmotionVocabulary() = default;

  explicit EmotionVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    validate();
  }

  static EmotionVocabulary beat_default() {
    return EmotionVocabulary({"neutral", "anger", "happiness", "fear", "disgust", "sadness",
                              "contempt", "surprise"});
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  EmotionLabel label(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
      throw ValidationError("EmotionVocabulary: id out of range");
    return {id, names_[static_cast<std::size_t>(id)]};
  }

  EmotionLabel label(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return {static_cast<int>(i), name};
    throw ValidationError("EmotionVocabulary: unknown emotion '" + name + "'");
  }

  int neutral_id() const { return label(std::string("neutral")).id; }

  void validate() const {
    if (names_.size() < 2) throw ValidationError("EmotionVocabulary: need at least 2 emotions");
    std::size_t neutral = 0;
    for (const auto& n : names_)
      if (n == "neutral") ++neutral;
    if (neutral != 1)
      throw ValidationError("EmotionVocabulary: exactly one 'neutral' label required");
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j]) throw ValidationError("EmotionVocabulary: duplicate label");
  }

  bool operator==(const EmotionVocabulary&) const = default;

 private:
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// training sample
// ---------------------------------------------------------------------------

// One emotion-transition example. Ground-truth poses exist for head and tail
// only; the transition segment is unsupervised by construction.
struct EmotionTransitionSample {
  AudioClip audio;
  PoseSequence head_pose_gt;
  PoseSequence tail_pose_gt;
  EmotionLabel head_emotion;
  EmotionLabel tail_emotion;
  PoseSequence seed_poses;  // M conditioning frames
  std::string sample_id;

  void validate(const SegmentLayout& layout, std::size_t seed_frames, double hop_seconds) const {
    layout.validate();
    if (head_emotion.name != "neutral")
      throw ValidationError(sample_id + ": head emotion must be neutral");
    if (tail_emotion.name == "neutral")
      throw ValidationError(sample_id + ": tail emotion must not be neutral");
    if (head_pose_gt.frames() != layout.head_frames)
      throw ValidationError(sample_id + ": head pose frame count mismatch");
    if (tail_pose_gt.frames() != layout.tail_frames)
      throw ValidationError(sample_id + ": tail pose frame count mismatch");
    if (seed_poses.frames() != seed_frames)
      throw ValidationError(sample_id + ": seed pose frame count mismatch");
    head_pose_gt.validate();
    tail_pose_gt.validate();
    seed_poses.validate();
    const double expected = static_cast<double>(layout.total()) / head_pose_gt.skeleton.fps;
    if (std::fabs(audio.duration() - expected) > hop_seconds + 1e-9)
      throw ValidationError(sample_id + ": audio duration " + std::to_string(audio.duration()) +
                            "s does not match layout duration " + std::to_string(expected) + "s");
  }
};

// ---------------------------------------------------------------------------
// pose track file format
//
// magic "EGPOSE1\n", u32 version, u32 J, u32 frames, f32 fps,
// per joint: u16 name length, name bytes, i32 parent index,
// then frames*J*3 float32, all little-endian.
// ---------------------------------------------------------------------------

namespace io_detail {

template <class T>
void write_raw(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (!in) throw std::runtime_error("pose file: truncated");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace io_detail

inline void write_pose_file(const std::string& path, const PoseSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pose_file: cannot open " + path);
  out.write("EGPOSE1\n", 8);
  io_detail::write_raw<std::uint32_t>(out, 1);
  io_detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(seq.joints()));
  io_detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(seq.frames()));
  io_detail::write_raw<float>(out, static_cast<float>(seq.skeleton.fps));
  for (std::size_t j = 0; j < seq.joints(); ++j) {
    const std::string& name = seq.skeleton.joint_names[j];
    io_detail::write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io_detail::write_raw<std::int32_t>(out, seq.skeleton.parent_index[j]);
  }
  for (std::size_t i = 0; i < seq.data.size(); ++i)
    io_detail::write_raw<float>(out, static_cast<float>(seq.data[i]));
  if (!out) throw std::runtime_error("write_pose_file: write failed for " + path);
}

inline PoseSequence read_pose_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pose_file: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "EGPOSE1\n", 8) != 0)
    throw std::runtime_error("read_pose_file: bad magic in " + path);
  const std::uint32_t version = io_detail::read_raw<std::uint32_t>(in);
  if (version != 1) throw std::runtime_error("read_pose_file: unsupported version");
  const std::uint32_t J = io_detail::read_raw<std::uint32_t>(in);
  const std::uint32_t frames = io_detail::read_raw<std::uint32_t>(in);
  const float fps = io_detail::read_raw<float>(in);
  SkeletonSpec skel;
  skel.joint_count = J;
  skel.fps = fps;
  for (std::uint32_t j = 0; j < J; ++j) {
    const std::uint16_t len = io_detail::read_raw<std::uint16_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    skel.joint_names.push_back(name);
    skel.parent_index.push_back(io_detail::read_raw<std::int32_t>(in));
  }
  Tensor data({frames, J, 3});
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<double>(io_detail::read_raw<float>(in));
  return PoseSequence(std::move(data), std::move(skel));
}

}  // namespace emogest
