//! Random and covert gibberish, plus the collision filter.

use tuni::gibberish::{
    check_collisions, generate_covert_names, generate_random_gibberish, real_names,
    GibberishConfig, SyllableLexicon,
};

fn main() -> tuni::Result<()> {
    let random = generate_random_gibberish(&GibberishConfig {
        count: 5,
        seed: 7,
        ..Default::default()
    })?;
    println!("random: {random:?}");

    let covert = generate_covert_names(8, &SyllableLexicon::default(), 7)?;
    println!("covert: {covert:?}");

    // a hand-built lexicon where some combinations are real names
    let lexicon = SyllableLexicon::new(
        vec!["Mar".into(), "Ev".into()],
        vec!["ia".into(), "an".into(), "ix".into()],
        real_names(),
    )?;
    let names = generate_covert_names(3, &lexicon, 1)?;
    println!("small lexicon: {names:?}");
    let candidates = vec!["Maria".to_string(), "Marix".to_string()];
    println!(
        "kept after collision check: {:?}",
        check_collisions(&candidates, &real_names())
    );
    Ok(())
}
