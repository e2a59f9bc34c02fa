use holomem::datapage::{random_page, render_page, slice_fragments, template_decode, PageGeometry};

use crate::Outcome;

pub fn criterion_3() -> Vec<(String, Outcome)> {
    let mut total = 0;
    let mut correct = 0;
    for seed in 0..10 {
        let page = random_page(PageGeometry::desk(), 1_000 + seed).unwrap();
        let image = render_page::<f64>(&page);
        for f in slice_fragments(&image, &page).unwrap() {
            total += 1;
            if template_decode(&f.pixels, 10, 0.5).unwrap() == f.label {
                correct += 1;
            }
        }
    }
    let pass = total == 4_000 && correct == total;
    vec![(
        "3 codec oracle equivalence".into(),
        Outcome::new(pass, format!("{correct}/{total} symbols recovered with the channel disabled")),
    )]
}
