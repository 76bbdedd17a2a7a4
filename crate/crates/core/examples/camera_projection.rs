//! Projects points through a pinhole camera, moves the camera and
//! backprojects the result.

use nalgebra::Vector3;
use stwarp::{compose_camera_transform, CameraIntrinsics, Point3, Pose};

fn main() -> stwarp::Result<()> {
    let k = CameraIntrinsics::new(100.0, 100.0, 48.0, 32.0, 96, 64)?;
    let p = Point3::new(0.2, -0.1, 1.5);
    let q = k.project(&p)?;
    println!("{p} projects to ({:.3}, {:.3})", q.u, q.v);

    let back = k.backproject(q, p.z)?;
    println!("backprojected at depth {}: {back}", p.z);

    // robot drives 10 cm forward with a camera looking straight down
    let te = Pose::from_axis_angle(Vector3::new(std::f64::consts::PI, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0));
    let tr = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
    let tc = compose_camera_transform(&tr, &te);
    println!("camera motion: t = {:?}", tc.translation().as_slice());

    let moved = tc.inverse().transform_point(&p);
    let q2 = k.project(&moved)?;
    println!("same point in the next frame: ({:.3}, {:.3})", q2.u, q2.v);
    Ok(())
}
