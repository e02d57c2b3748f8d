//! Score three hand-made "methods" on synthetic subjects, rank them and draw overlays.

use ttuda::data::{make_synthetic_domains, Axis, LabelMap, SyntheticShiftParams};
use ttuda::evaluation::{
    evaluate_case, rank_methods, write_overlays, Connectivity, MetricsReport, DEFAULT_ALPHA,
};

fn erode_rows(gt: &LabelMap, every: usize) -> LabelMap {
    let [d, h, w] = gt.dims();
    let m: Vec<u8> = gt
        .read()
        .iter()
        .enumerate()
        .map(|(i, &v)| if (i / w) % every == 0 { 0 } else { v })
        .collect();
    LabelMap::new(m, [d, h, w], gt.subject_id()).unwrap()
}

fn main() -> ttuda::Result<()> {
    let (_, target) = make_synthetic_domains(1, 8, &SyntheticShiftParams::identity(0), 32, 4)?;
    let mut rows = Vec::new();
    for s in target.items() {
        let gt = s.label.as_ref().unwrap().detached();
        let spacing = s.volume.spacing();
        for (method, pred) in [
            ("exact", gt.detached()),
            ("thinned", erode_rows(&gt, 3)),
            ("sparse", erode_rows(&gt, 2)),
        ] {
            rows.push(evaluate_case(
                method,
                s.volume.subject_id(),
                &pred,
                &gt,
                spacing,
                Connectivity::Eighteen,
            )?);
        }
    }
    let report = MetricsReport::new(rows);
    print!("{}", report.to_csv());
    let table = rank_methods(&report, DEFAULT_ALPHA)?;
    print!("{}", table.to_csv());

    let dir = tempfile::tempdir()?;
    let s = &target.items()[0];
    let gt = s.label.as_ref().unwrap();
    let paths = write_overlays(
        &s.volume,
        &erode_rows(gt, 3),
        gt,
        Axis::Axial,
        dir.path(),
        "slice",
        4,
    )?;
    println!("wrote {} overlays to {}", paths.len(), dir.path().display());
    Ok(())
}
