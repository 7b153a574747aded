#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vpet/geometry.hpp"

namespace vpet {

// ASCII OBJ subset: v and f records, 1-based indices. Faces with more than
// three vertices are fan-triangulated. Other record types are ignored.
inline TriMesh load_obj(std::istream& in, const std::string& name = "<stream>") {
  TriMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z))
        throw std::runtime_error(name + ":" + std::to_string(lineno) +
                                 ": malformed vertex record");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        // accept v, v/vt, v/vt/vn, v//vn; the leading index is what we keep
        std::size_t slash = tok.find('/');
        std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        int i = 0;
        try {
          i = std::stoi(head);
        } catch (const std::exception&) {
          throw std::runtime_error(name + ":" + std::to_string(lineno) +
                                   ": malformed face index '" + tok + "'");
        }
        if (i < 1 || i > static_cast<int>(mesh.vertices.size()))
          throw std::runtime_error(name + ":" + std::to_string(lineno) +
                                   ": face index out of range");
        idx.push_back(i - 1);
      }
      if (idx.size() < 3)
        throw std::runtime_error(name + ":" + std::to_string(lineno) +
                                 ": face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k)
        mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  mesh.validate();
  return mesh;
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open OBJ file: " + path);
  return load_obj(in, path);
}

inline void save_obj(std::ostream& out, const TriMesh& mesh) {
  out.precision(17);
  for (const Vec3& v : mesh.vertices)
    out << "v " << v.x << " " << v.y << " " << v.z << "\n";
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

inline void save_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write OBJ file: " + path);
  save_obj(out, mesh);
}

// plain text point clouds, one "x y z" per line
inline PointCloud load_xyz(std::istream& in, const std::string& name = "<stream>") {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z))
      throw std::runtime_error(name + ":" + std::to_string(lineno) +
                               ": malformed point record");
    cloud.points.push_back(p);
  }
  return cloud;
}

inline PointCloud load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open point file: " + path);
  return load_xyz(in, path);
}

inline void save_xyz(std::ostream& out, const PointCloud& cloud) {
  out.precision(17);
  for (const Vec3& p : cloud.points)
    out << p.x << " " << p.y << " " << p.z << "\n";
}

inline void save_xyz(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write point file: " + path);
  save_xyz(out, cloud);
}

}  // namespace vpet
