use dilseg::contour::{msd, skeletonize, PointSet};
use dilseg::spline::{fit_spline, rasterize, Interpolant, MarkerSet};
use proptest::prelude::*;

/// Left-to-right marker chains with bounded vertical steps.
fn markers() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (2usize..=7, 5.0f64..20.0, 30.0f64..98.0).prop_flat_map(|(n, x0, y0)| {
        proptest::collection::vec((10.0f64..18.0, -10.0f64..10.0), n - 1).prop_map(move |steps| {
            let mut pts = vec![(x0, y0)];
            for (dx, dy) in steps {
                let &(x, y) = pts.last().unwrap();
                pts.push((x + dx, (y + dy).clamp(10.0, 118.0)));
            }
            pts
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_visits_every_marker(m in markers()) {
        let curve = Interpolant::fit(&m).unwrap();
        for (&q, &u) in m.iter().zip(curve.marker_params()) {
            let p = curve.eval(u);
            prop_assert!((p.0 - q.0).hypot(p.1 - q.1) < 1e-6, "{:?} vs {:?}", p, q);
        }
        let c = fit_spline(&MarkerSet::new("f", m.clone()), 300, 256, 256).unwrap();
        prop_assert_eq!(c.polyline[0], m[0]);
        prop_assert_eq!(*c.polyline.last().unwrap(), *m.last().unwrap());
        prop_assert_eq!(c.polyline.len(), c.sample_count);
        for w in c.polyline.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            prop_assert!(d <= 2.0, "gap {d}");
        }
    }

    #[test]
    fn fit_commutes_with_translation(m in markers(), dx in -4.0f64..4.0, dy in -8.0f64..8.0) {
        let a = fit_spline(&MarkerSet::new("f", m.clone()), 200, 256, 256).unwrap();
        let shifted: Vec<(f64, f64)> = m.iter().map(|&(x, y)| (x + dx + 10.0, y + dy + 10.0)).collect();
        let b = fit_spline(&MarkerSet::new("f", shifted), 200, 256, 256).unwrap();
        prop_assert_eq!(a.degree, b.degree);
        for (p, q) in a.polyline.iter().zip(&b.polyline) {
            prop_assert!((q.0 - p.0 - dx - 10.0).abs() < 1e-9 && (q.1 - p.1 - dy - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn raster_skeleton_stays_on_the_curve(m in markers()) {
        let c = fit_spline(&MarkerSet::new("f", m), 400, 128, 128).unwrap();
        let (mask, _) = rasterize(&c, 3, 128, 128).unwrap();
        let skel = PointSet::from_mask(&skeletonize(&mask));
        let src = PointSet::new(c.polyline.iter().map(|&(x, y)| (y.round() as usize, x.round() as usize)));
        prop_assert!(msd(&skel, &src).unwrap() < 1.0);
    }
}
