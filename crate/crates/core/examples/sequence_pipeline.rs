//! Raw events to ranking and retrieval token sequences, and the cost of
//! impression-level against generative training.

use genrec::sequence::{
    build_sequence, count_training_flops, sequentialize_users, Event, Task, TrainingMode,
};

fn main() {
    let events = vec![
        Event::engagement(1, 100, 0b01, 10),
        Event::contextual(1, 2, 7, 15),
        Event::engagement(1, 205, 0b11, 20),
        Event::engagement(2, 100, 0b00, 12),
        Event::engagement(1, 318, 0b01, 30),
    ];
    for (user, history) in sequentialize_users(&events) {
        for task in [Task::Ranking, Task::Retrieval] {
            let seq = build_sequence(&history, task, 0b01);
            println!("user {user} {task:?}: {} tokens, {} targets", seq.len(), seq.num_targets());
            for (tok, tgt) in seq.tokens.iter().zip(&seq.targets) {
                println!("    {tok:?} -> {tgt:?}");
            }
        }
    }

    let lengths = [64, 256, 1024];
    let imp = count_training_flops(&lengths, 64, 256, TrainingMode::Impression);
    let gen = count_training_flops(&lengths, 64, 256, TrainingMode::Generative);
    println!("encoder flops: impression {imp:.3e}, generative {gen:.3e} ({:.0}x)", imp as f64 / gen as f64);
}
