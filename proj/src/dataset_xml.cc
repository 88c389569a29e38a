#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <expat.h>

#include "vector/dataset.h"
#include "vector/errors.h"

namespace vec {
namespace {

// Attribute list as handed over by expat: name, value, name, value, ..., null.
class Attributes {
 public:
  explicit Attributes(const XML_Char** attrs) : attrs_(attrs) {}

  const char* Find(std::string_view name) const {
    for (const XML_Char** a = attrs_; *a != nullptr; a += 2) {
      if (name == a[0]) return a[1];
    }
    return nullptr;
  }

  template <typename Fn>
  void ForEachName(Fn&& fn) const {
    for (const XML_Char** a = attrs_; *a != nullptr; a += 2) fn(a[0]);
  }

 private:
  const XML_Char** attrs_;
};

class Handler {
 public:
  virtual ~Handler() = default;
  virtual void Start(std::string_view name, const Attributes& attrs) = 0;
  virtual void End(std::string_view name) = 0;

  void set_parser(XML_Parser parser) { parser_ = parser; }
  long Line() const {
    return parser_ ? static_cast<long>(XML_GetCurrentLineNumber(parser_)) : 0;
  }
  void set_warnings(std::vector<Warning>* warnings) { warnings_ = warnings; }

 protected:
  [[noreturn]] void Fail(const std::string& message) const {
    throw SchemaError(message, Line());
  }

  void Warn(const std::string& subject, const std::string& message) const {
    if (warnings_ != nullptr) {
      warnings_->push_back(
          {subject, "line " + std::to_string(Line()) + ": " + message});
    }
  }

  // Warns about attributes outside `known`.
  void CheckAttributes(std::string_view element, const Attributes& attrs,
                       std::initializer_list<std::string_view> known,
                       const std::string& subject) const {
    attrs.ForEachName([&](const char* name) {
      for (auto k : known) {
        if (k == name) return;
      }
      Warn(subject, "unknown attribute '" + std::string(name) + "' on <" +
                        std::string(element) + ">");
    });
  }

  const char* Require(std::string_view element, const Attributes& attrs,
                      std::string_view name) const {
    const char* value = attrs.Find(name);
    if (value == nullptr) {
      Fail("<" + std::string(element) + "> is missing attribute '" +
           std::string(name) + "'");
    }
    return value;
  }

  double Number(std::string_view element, const Attributes& attrs,
                std::string_view name) const {
    std::string_view text = Require(element, attrs, name);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
      text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
      text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
      throw ValueError("line " + std::to_string(Line()) + ": attribute '" +
                       std::string(name) + "' of <" + std::string(element) +
                       "> is not a number: '" + std::string(text) + "'");
    }
    if (!std::isfinite(value)) {
      throw ValueError("line " + std::to_string(Line()) + ": attribute '" +
                       std::string(name) + "' of <" + std::string(element) +
                       "> is not finite");
    }
    return value;
  }

  int Integer(std::string_view element, const Attributes& attrs,
              std::string_view name) const {
    const double value = Number(element, attrs, name);
    if (value != std::floor(value) || value < 1 || value > 1e9) {
      throw ValueError("line " + std::to_string(Line()) + ": attribute '" +
                       std::string(name) + "' of <" + std::string(element) +
                       "> must be a positive integer");
    }
    return static_cast<int>(value);
  }

 private:
  XML_Parser parser_ = nullptr;
  std::vector<Warning>* warnings_ = nullptr;
};

// Drives expat over chunks of input. Exceptions raised inside callbacks are
// parked and rethrown after expat unwinds, never thrown through C frames.
class Driver {
 public:
  explicit Driver(Handler& handler)
      : parser_(XML_ParserCreate("UTF-8"), &XML_ParserFree), handler_(handler) {
    XML_SetUserData(parser_.get(), this);
    XML_SetElementHandler(parser_.get(), &Driver::OnStart, &Driver::OnEnd);
    XML_SetCharacterDataHandler(parser_.get(), &Driver::OnText);
    handler_.set_parser(parser_.get());
  }

  ~Driver() { handler_.set_parser(nullptr); }

  void Feed(const char* data, size_t size, bool final) {
    const XML_Status status = XML_Parse(parser_.get(), data,
                                        static_cast<int>(size), final ? 1 : 0);
    if (error_) std::rethrow_exception(error_);
    if (status != XML_STATUS_OK) {
      throw SchemaError(
          std::string("malformed XML: ") +
              XML_ErrorString(XML_GetErrorCode(parser_.get())),
          static_cast<long>(XML_GetCurrentLineNumber(parser_.get())));
    }
  }

  void ParseAll(std::string_view text) {
    constexpr size_t kChunk = 1 << 24;
    size_t offset = 0;
    do {
      const size_t n = std::min(kChunk, text.size() - offset);
      Feed(text.data() + offset, n, offset + n == text.size());
      offset += n;
    } while (offset < text.size());
  }

  void ParseStream(std::istream& input) {
    std::vector<char> buffer(1 << 16);
    while (true) {
      input.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      const auto n = static_cast<size_t>(input.gcount());
      const bool final = !input;
      Feed(buffer.data(), n, final);
      if (final) break;
    }
  }

 private:
  template <typename Fn>
  void Guard(Fn&& fn) {
    if (error_) return;
    try {
      fn();
    } catch (...) {
      error_ = std::current_exception();
      XML_StopParser(parser_.get(), XML_FALSE);
    }
  }

  static void OnStart(void* self, const XML_Char* name, const XML_Char** attrs) {
    auto* driver = static_cast<Driver*>(self);
    driver->Guard([&] { driver->handler_.Start(name, Attributes(attrs)); });
  }

  static void OnEnd(void* self, const XML_Char* name) {
    auto* driver = static_cast<Driver*>(self);
    driver->Guard([&] { driver->handler_.End(name); });
  }

  static void OnText(void* self, const XML_Char* text, int length) {
    auto* driver = static_cast<Driver*>(self);
    driver->Guard([&] {
      for (int i = 0; i < length; ++i) {
        if (!std::isspace(static_cast<unsigned char>(text[i]))) {
          throw SchemaError("unexpected text content",
                            driver->handler_.Line());
        }
      }
    });
  }

  std::unique_ptr<XML_ParserStruct, decltype(&XML_ParserFree)> parser_;
  Handler& handler_;
  std::exception_ptr error_;
};

Eigen::Quaterniond CheckedQuaternion(double w, double x, double y, double z,
                                     long line) {
  Eigen::Quaterniond q(w, x, y, z);
  const double squared = q.squaredNorm();
  // Already unit to rounding: keep verbatim so text round trips are exact.
  if (std::abs(squared - 1.0) <= 1e-14) return q;
  if (std::abs(std::sqrt(squared) - 1.0) <= 1e-6) {
    q.normalize();
    return q;
  }
  throw ValueError("line " + std::to_string(line) +
                   ": rotation quaternion is not unit (norm " +
                   std::to_string(std::sqrt(squared)) + ")");
}

class CamerasHandler final : public Handler {
 public:
  explicit CamerasHandler(std::vector<Camera>& out) : out_(out) {}

  void Start(std::string_view name, const Attributes& attrs) override {
    switch (depth_++) {
      case 0:
        if (name != "cameras") Fail("root element must be <cameras>");
        return;
      case 1:
        if (name != "camera") Fail("unknown element <" + std::string(name) + ">");
        StartCamera(attrs);
        return;
      case 2:
        StartCameraChild(name, attrs);
        return;
      case 3:
        StartPoseChild(name, attrs);
        return;
      default:
        Fail("unknown element <" + std::string(name) + ">");
    }
  }

  void End(std::string_view name) override {
    --depth_;
    if (depth_ == 2 && name == "pose") EndPose();
    if (depth_ == 1) EndCamera();
  }

 private:
  void StartCamera(const Attributes& attrs) {
    current_ = Camera{};
    current_.id = Require("camera", attrs, "id");
    CheckAttributes("camera", attrs, {"id"}, current_.id);
    if (!ids_.insert(current_.id).second) {
      throw DuplicateId("line " + std::to_string(Line()) +
                        ": duplicate camera id '" + current_.id + "'");
    }
    has_image_ = has_intrinsics_ = has_initial_ = false;
  }

  void StartCameraChild(std::string_view name, const Attributes& attrs) {
    if (name == "image") {
      if (has_image_) Fail("duplicate <image> in camera '" + current_.id + "'");
      CheckAttributes(name, attrs, {"src", "width", "height"}, current_.id);
      current_.image_ref = Require(name, attrs, "src");
      current_.intrinsics.width = Integer(name, attrs, "width");
      current_.intrinsics.height = Integer(name, attrs, "height");
      has_image_ = true;
    } else if (name == "intrinsics") {
      if (has_intrinsics_) {
        Fail("duplicate <intrinsics> in camera '" + current_.id + "'");
      }
      CheckAttributes(name, attrs, {"fx", "fy", "cx", "cy"}, current_.id);
      auto& k = current_.intrinsics;
      k.fx = Number(name, attrs, "fx");
      k.fy = Number(name, attrs, "fy");
      k.cx = Number(name, attrs, "cx");
      k.cy = Number(name, attrs, "cy");
      if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
        throw ValueError("line " + std::to_string(Line()) +
                         ": focal lengths must be positive");
      }
      has_intrinsics_ = true;
    } else if (name == "pose") {
      CheckAttributes(name, attrs, {"kind"}, current_.id);
      const std::string kind = Require(name, attrs, "kind");
      if (kind == "initial") {
        if (has_initial_) Fail("duplicate initial pose in '" + current_.id + "'");
        pose_kind_ = ResidualKind::kInitial;
      } else if (kind == "final") {
        if (current_.pose_final) {
          Fail("duplicate final pose in '" + current_.id + "'");
        }
        pose_kind_ = ResidualKind::kFinal;
      } else {
        throw ValueError("line " + std::to_string(Line()) +
                         ": unknown pose kind '" + kind + "'");
      }
      has_rotation_ = has_center_ = false;
      pose_ = Pose{};
    } else {
      Fail("unknown element <" + std::string(name) + "> in camera");
    }
  }

  void StartPoseChild(std::string_view name, const Attributes& attrs) {
    if (name == "rotation") {
      if (has_rotation_) Fail("duplicate <rotation>");
      CheckAttributes(name, attrs, {"qw", "qx", "qy", "qz"}, current_.id);
      pose_.rotation = CheckedQuaternion(
          Number(name, attrs, "qw"), Number(name, attrs, "qx"),
          Number(name, attrs, "qy"), Number(name, attrs, "qz"), Line());
      has_rotation_ = true;
    } else if (name == "center") {
      if (has_center_) Fail("duplicate <center>");
      CheckAttributes(name, attrs, {"x", "y", "z"}, current_.id);
      pose_.center = {Number(name, attrs, "x"), Number(name, attrs, "y"),
                      Number(name, attrs, "z")};
      has_center_ = true;
    } else {
      Fail("unknown element <" + std::string(name) + "> in pose");
    }
  }

  void EndPose() {
    if (!has_rotation_) Fail("<pose> is missing <rotation>");
    if (!has_center_) Fail("<pose> is missing <center>");
    if (pose_kind_ == ResidualKind::kInitial) {
      current_.pose_initial = pose_;
      has_initial_ = true;
    } else {
      current_.pose_final = pose_;
    }
  }

  void EndCamera() {
    if (!has_image_) Fail("camera '" + current_.id + "' is missing <image>");
    if (!has_intrinsics_) {
      Fail("camera '" + current_.id + "' is missing <intrinsics>");
    }
    if (!has_initial_) {
      Fail("camera '" + current_.id + "' is missing the initial <pose>");
    }
    out_.push_back(std::move(current_));
  }

  std::vector<Camera>& out_;
  std::unordered_set<std::string> ids_;
  int depth_ = 0;
  Camera current_;
  Pose pose_;
  ResidualKind pose_kind_ = ResidualKind::kInitial;
  bool has_image_ = false, has_intrinsics_ = false, has_initial_ = false;
  bool has_rotation_ = false, has_center_ = false;
};

class TracksHandler final : public Handler {
 public:
  TracksHandler(std::span<const Camera> cameras,
                const std::function<void(Track&&)>& visitor)
      : cameras_(cameras), visitor_(visitor) {}

  void Start(std::string_view name, const Attributes& attrs) override {
    switch (depth_++) {
      case 0:
        if (name != "tracks") Fail("root element must be <tracks>");
        return;
      case 1:
        if (name != "track") Fail("unknown element <" + std::string(name) + ">");
        current_ = Track{};
        current_.id = Require(name, attrs, "id");
        CheckAttributes(name, attrs, {"id"}, current_.id);
        if (!ids_.insert(current_.id).second) {
          throw DuplicateId("line " + std::to_string(Line()) +
                            ": duplicate track id '" + current_.id + "'");
        }
        has_initial_ = false;
        seen_cameras_.clear();
        return;
      case 2:
        StartTrackChild(name, attrs);
        return;
      default:
        Fail("unknown element <" + std::string(name) + ">");
    }
  }

  void End(std::string_view) override {
    if (--depth_ == 1) EndTrack();
  }

 private:
  void StartTrackChild(std::string_view name, const Attributes& attrs) {
    if (name == "point") {
      CheckAttributes(name, attrs, {"kind", "x", "y", "z"}, current_.id);
      const std::string kind = Require(name, attrs, "kind");
      const Eigen::Vector3d xyz(Number(name, attrs, "x"),
                                Number(name, attrs, "y"),
                                Number(name, attrs, "z"));
      if (kind == "initial") {
        if (has_initial_) Fail("duplicate initial point in '" + current_.id + "'");
        current_.point_initial = xyz;
        has_initial_ = true;
      } else if (kind == "final") {
        if (current_.point_final) {
          Fail("duplicate final point in '" + current_.id + "'");
        }
        current_.point_final = xyz;
      } else {
        throw ValueError("line " + std::to_string(Line()) +
                         ": unknown point kind '" + kind + "'");
      }
    } else if (name == "obs") {
      CheckAttributes(name, attrs, {"camera", "u", "v"}, current_.id);
      Observation obs;
      obs.camera_id = Require(name, attrs, "camera");
      if (cameras_.Find(obs.camera_id) == nullptr) {
        throw UnknownCameraRef("line " + std::to_string(Line()) + ": track '" +
                               current_.id + "' references unknown camera '" +
                               obs.camera_id + "'");
      }
      if (std::find(seen_cameras_.begin(), seen_cameras_.end(),
                    obs.camera_id) != seen_cameras_.end()) {
        throw ValueError("line " + std::to_string(Line()) + ": track '" +
                         current_.id + "' observes camera '" + obs.camera_id +
                         "' twice");
      }
      seen_cameras_.push_back(obs.camera_id);
      obs.pixel = {Number(name, attrs, "u"), Number(name, attrs, "v")};
      current_.observations.push_back(std::move(obs));
    } else {
      Fail("unknown element <" + std::string(name) + "> in track");
    }
  }

  void EndTrack() {
    if (!has_initial_) Fail("track '" + current_.id + "' has no initial point");
    if (current_.observations.size() < 2) {
      throw TooFewObservations("line " + std::to_string(Line()) + ": track '" +
                               current_.id + "' has " +
                               std::to_string(current_.observations.size()) +
                               " observation(s), at least 2 required");
    }
    visitor_(std::move(current_));
  }

  CameraLookup cameras_;
  const std::function<void(Track&&)>& visitor_;
  // Ids are kept for duplicate detection; this is the only per-document
  // state that grows with the file.
  std::unordered_set<std::string> ids_;
  std::vector<std::string> seen_cameras_;
  int depth_ = 0;
  Track current_;
  bool has_initial_ = false;
};

//
// Writing.
//

void AppendNumber(std::string& out, double value) {
  std::array<char, 32> buffer;
  auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(),
                                 value, std::chars_format::general, 17);
  out.append(buffer.data(), ptr);
}

void AppendEscaped(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
}

void AppendAttr(std::string& out, std::string_view name, double value) {
  out += ' ';
  out += name;
  out += "=\"";
  AppendNumber(out, value);
  out += '"';
}

void AppendAttr(std::string& out, std::string_view name, std::string_view value) {
  out += ' ';
  out += name;
  out += "=\"";
  AppendEscaped(out, value);
  out += '"';
}

void AppendPose(std::string& out, const Pose& pose, std::string_view kind) {
  out += "    <pose kind=\"";
  out += kind;
  out += "\">\n      <rotation";
  AppendAttr(out, "qw", pose.rotation.w());
  AppendAttr(out, "qx", pose.rotation.x());
  AppendAttr(out, "qy", pose.rotation.y());
  AppendAttr(out, "qz", pose.rotation.z());
  out += "/>\n      <center";
  AppendAttr(out, "x", pose.center.x());
  AppendAttr(out, "y", pose.center.y());
  AppendAttr(out, "z", pose.center.z());
  out += "/>\n    </pose>\n";
}

void AppendPoint(std::string& out, const Eigen::Vector3d& point,
                 std::string_view kind) {
  out += "    <point kind=\"";
  out += kind;
  out += '"';
  AppendAttr(out, "x", point.x());
  AppendAttr(out, "y", point.y());
  AppendAttr(out, "z", point.z());
  out += "/>\n";
}

constexpr std::string_view kXmlDeclaration =
    "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

}  // namespace

size_t Dataset::NumObservations() const {
  size_t count = 0;
  for (const auto& track : tracks) count += track.observations.size();
  return count;
}

std::vector<Camera> ParseCameras(std::string_view xml,
                                 std::vector<Warning>* warnings) {
  std::vector<Camera> cameras;
  CamerasHandler handler(cameras);
  handler.set_warnings(warnings);
  Driver(handler).ParseAll(xml);
  return cameras;
}

std::vector<Camera> ParseCameras(std::istream& input,
                                 std::vector<Warning>* warnings) {
  std::vector<Camera> cameras;
  CamerasHandler handler(cameras);
  handler.set_warnings(warnings);
  Driver(handler).ParseStream(input);
  return cameras;
}

std::vector<Track> ParseTracks(std::string_view xml,
                               std::span<const Camera> cameras,
                               std::vector<Warning>* warnings) {
  std::vector<Track> tracks;
  const std::function<void(Track&&)> visitor = [&](Track&& track) {
    tracks.push_back(std::move(track));
  };
  TracksHandler handler(cameras, visitor);
  handler.set_warnings(warnings);
  Driver(handler).ParseAll(xml);
  return tracks;
}

void StreamTracks(std::istream& input, std::span<const Camera> cameras,
                  const std::function<void(Track&&)>& visitor,
                  std::vector<Warning>* warnings) {
  TracksHandler handler(cameras, visitor);
  handler.set_warnings(warnings);
  Driver(handler).ParseStream(input);
}

CamerasXmlWriter::CamerasXmlWriter(std::ostream& out) : out_(out) {
  out_ << kXmlDeclaration << "<cameras>\n";
}

void CamerasXmlWriter::Write(const Camera& camera) {
  std::string text = "  <camera";
  AppendAttr(text, "id", camera.id);
  text += ">\n    <image";
  AppendAttr(text, "src", camera.image_ref);
  text += " width=\"" + std::to_string(camera.intrinsics.width) +
          "\" height=\"" + std::to_string(camera.intrinsics.height) + "\"/>\n";
  text += "    <intrinsics";
  AppendAttr(text, "fx", camera.intrinsics.fx);
  AppendAttr(text, "fy", camera.intrinsics.fy);
  AppendAttr(text, "cx", camera.intrinsics.cx);
  AppendAttr(text, "cy", camera.intrinsics.cy);
  text += "/>\n";
  AppendPose(text, camera.pose_initial, "initial");
  if (camera.pose_final) AppendPose(text, *camera.pose_final, "final");
  text += "  </camera>\n";
  out_ << text;
}

void CamerasXmlWriter::Finish() {
  if (finished_) return;
  out_ << "</cameras>\n";
  finished_ = true;
}

TracksXmlWriter::TracksXmlWriter(std::ostream& out) : out_(out) {
  out_ << kXmlDeclaration << "<tracks>\n";
}

void TracksXmlWriter::Write(const Track& track) {
  std::string text = "  <track";
  AppendAttr(text, "id", track.id);
  text += ">\n";
  AppendPoint(text, track.point_initial, "initial");
  if (track.point_final) AppendPoint(text, *track.point_final, "final");
  for (const auto& obs : track.observations) {
    text += "    <obs";
    AppendAttr(text, "camera", obs.camera_id);
    AppendAttr(text, "u", obs.pixel.x());
    AppendAttr(text, "v", obs.pixel.y());
    text += "/>\n";
  }
  text += "  </track>\n";
  out_ << text;
}

void TracksXmlWriter::Finish() {
  if (finished_) return;
  out_ << "</tracks>\n";
  finished_ = true;
}

std::pair<std::string, std::string> Serialize(const Dataset& dataset) {
  std::ostringstream cameras_out;
  CamerasXmlWriter cameras(cameras_out);
  for (const auto& camera : dataset.cameras) cameras.Write(camera);
  cameras.Finish();

  std::ostringstream tracks_out;
  TracksXmlWriter tracks(tracks_out);
  for (const auto& track : dataset.tracks) tracks.Write(track);
  tracks.Finish();
  return {std::move(cameras_out).str(), std::move(tracks_out).str()};
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream contents;
  contents << in.rdbuf();
  return std::move(contents).str();
}

void WriteFile(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Dataset LoadDataset(const std::string& cameras_path,
                    const std::string& tracks_path,
                    std::vector<Warning>* warnings) {
  Dataset dataset;
  dataset.name = std::filesystem::path(cameras_path).stem().string();
  {
    std::ifstream in(cameras_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + cameras_path + "'");
    dataset.cameras = ParseCameras(in, warnings);
  }
  std::ifstream in(tracks_path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + tracks_path + "'");
  StreamTracks(
      in, dataset.cameras,
      [&](Track&& track) { dataset.tracks.push_back(std::move(track)); },
      warnings);
  return dataset;
}

void SaveDataset(const Dataset& dataset, const std::string& cameras_path,
                 const std::string& tracks_path) {
  auto [cameras, tracks] = Serialize(dataset);
  WriteFile(cameras_path, cameras);
  WriteFile(tracks_path, tracks);
}

}  // namespace vec
