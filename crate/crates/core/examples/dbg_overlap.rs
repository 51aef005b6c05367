use pmdk::dataset::*;
use pmdk::geom::*;
use pmdk::scene::*;
use pmdk::correspond::overlap_ratio;
use pmdk::encode::normalize_pair;

fn main() {
    let scene = random_scene(42);
    let spec = TrajectorySpec {
        intrinsics: Intrinsics::new(40.0, 40.0, 23.5, 15.5, 48, 32).unwrap(),
        start: [0.0, 0.0, 0.0], heading: 0.0, step: 0.8, frames: 6, augment: Augment::None,
    };
    let views: Vec<ViewRecord> = make_trajectory(&spec).unwrap().into_iter().enumerate().map(|(index, view)| {
        let out = render(&scene, &view).unwrap();
        let lidar = simulate_lidar(&scene, &view, &LidarPattern::default()).unwrap();
        ViewRecord { index, image: out.image, depth: out.depth, view, lidar }
    }).collect();
    for gap in 1..4 {
        let p = build_pair(&views[0], &views[gap], GeometrySource::Dense).unwrap();
        // Raw overlap at several meter tolerances
        for tol in [0.05, 0.2, 0.5, 1.0] {
            let o = overlap_ratio(&p.x_ref_t, &p.x_tgt_t, &p.k_target, tol).unwrap();
            print!("gap{gap} tol{tol}: {o:.3}  ");
        }
        // Normalized-units equivalent
        let (_, _, norm) = normalize_pair(&p.x_ref_t, &p.x_tgt_t).unwrap();
        let tol_m = 0.05 / norm.scale;
        let o = overlap_ratio(&p.x_ref_t, &p.x_tgt_t, &p.k_target, tol_m).unwrap();
        println!("| norm-derived tol {:.2}m: {o:.3}", tol_m);
    }
    let lp = build_pair(&views[0], &views[1], GeometrySource::Lidar).unwrap();
    let dp = build_pair(&views[0], &views[1], GeometrySource::Dense).unwrap();
    println!("lidar tgt valid {} vs dense {}", lp.x_tgt_t.valid_count(), dp.x_tgt_t.valid_count());
}
