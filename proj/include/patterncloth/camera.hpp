#pragma once

#include <Eigen/Dense>

#include "patterncloth/errors.hpp"

namespace patterncloth::cam {

// Pinhole camera, world units mm, image units px. Extrinsics map world to
// camera space: x_cam = R x_world + t, camera looks along +z.
struct Camera {
    int id = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    Eigen::Vector3d center() const { return -R.transpose() * t; }
};

inline Eigen::Vector2d project(const Camera& c, const Eigen::Vector3d& p) {
    const Eigen::Vector3d q = c.R * p + c.t;
    if (q.z() <= 0.0) throw BehindCamera("project: point at or behind the camera plane");
    return {c.cx + c.fx * q.x() / q.z(), c.cy + c.fy * q.y() / q.z()};
}

inline bool in_bounds(const Camera& c, const Eigen::Vector2d& px) {
    return px.x() >= 0.0 && px.x() < c.width && px.y() >= 0.0 && px.y() < c.height;
}

// Convenience rig builder: camera at eye looking at target.
inline Camera look_at(int id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double f, int width, int height) {
    Camera c;
    c.id = id;
    c.fx = c.fy = f;
    c.width = width;
    c.height = height;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = up.cross(z);
    if (x.norm() < 1e-12) throw std::invalid_argument("look_at: up parallel to view direction");
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    c.R.row(0) = x;
    c.R.row(1) = y;
    c.R.row(2) = z;
    c.t = -c.R * eye;
    return c;
}

}  // namespace patterncloth::cam
