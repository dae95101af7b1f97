use serde::{Deserialize, Serialize};

use super::{AgentTurn, TurnContext};

/// Task intent given to every agent.
pub const TASK_INTENT: &str = "Add the best product from the open tabs to the shopping cart.
- You should visit every tab and collect information explicitly in your memory.
- Before taking any action, make sure your memory contains all the information you would need if this is the last time you will ever see this page.
- Avoid vague summaries; store actual, useful information.
- Avoid redundant or unnecessary actions. Repeating the same action reduces your chance of success.";

const INSTRUCTIONS: &str = "# Instructions
Review the current state of the page and all other information to find the best possible next action to accomplish your goal. Your answer will be interpreted and executed by a program, make sure to follow the formatting instructions.";

const HTML_NOTE: &str = "Note: only elements that are visible in the viewport are presented. You might need to scroll the page, or open tabs or menus to see more.";

const ACTION_SPACE: &str = "# Action space:
Note: This action set allows you to interact with your environment. The primary way of referring to elements in the page is through bid which are specified in your observations.

9 different types of actions are available.

click(bid: str, button: Literal['left', 'middle', 'right'] = 'left', modifiers: list[Literal['Alt', 'Control', 'ControlOrMeta', 'Meta', 'Shift']] = [])
    Description: Click an element.
    Examples:
        click('a51')

        click('b22', button='right')

fill(bid: str, value: str)
    Description: Fill out a form field.
    Examples:
        fill('237', 'example value')

go_back()
    Description: Navigate to the previous page in history.
    Examples:
        go_back()

go_forward()
    Description: Navigate to the next page in history.
    Examples:
        go_forward()

goto(url: str)
    Description: Navigate to a url.
    Examples:
        goto('http://www.example.com')

scroll(delta_x: float, delta_y: float)
    Description: Scroll horizontally and vertically. Amounts in pixels, positive for right or down scrolling, negative for left or up scrolling.
    Examples:
        scroll(0, 200)

        scroll(-50.2, -100.5)

select_option(bid: str, options: str | list[str])
    Description: Select one or multiple options in a <select> element.
    Examples:
        select_option('a48', 'blue')

        select_option('c48', ['red', 'green', 'blue'])

keyboard_press(key: str)
    Description: Press a combination of keys, e.g. PageDown, PageUp, Home, End, ArrowDown, ArrowUp.
    Examples:
        keyboard_press('Backspace')

tab_focus(index: int)
    Description: Bring tab to front (activate tab).
    Examples:
        tab_focus(2)

Only a single action can be provided at once. Example:
fill('a12', 'example with \"quotes\"')";

const ABSTRACT_EXAMPLE: &str = "# Abstract Example

Here is an abstract version of the answer with description of the content of each tag. Make sure you follow this structure, but replace the content with your answer:

<think>
Think step by step. If you need to make calculations such as coordinates, write them here. Describe the effect that your previous action had on the current content of the page.
</think>

<memory>
Write down anything you need to remember for next steps. You will be presented with the list of previous memories and past actions. Some tasks require to remember hints from previous steps in order to solve it.
</memory>

<action>
One single action to be executed. You can only use one action at a time.
</action>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

pub type PromptContext<'a> = TurnContext<'a>;

fn history_block(history: &[AgentTurn]) -> String {
    let mut out = String::from("# History of interaction with the task:\n");
    for (i, turn) in history.iter().enumerate() {
        out.push_str(&format!(
            "\n## step {i}\n\n<think>\n{}\n</think>\n\n<memory>\n{}\n</memory>\n\n<action>\n{}\n</action>\n",
            turn.think, turn.memory, turn.action
        ));
    }
    out
}

/// Full agent context for one step as chat messages.
pub fn build_prompt(ctx: &PromptContext<'_>) -> Vec<ChatMessage> {
    let mut goal = format!("## Goal:\n\n{}", ctx.intent);
    if let Some(profile) = ctx.profile {
        goal.push_str("\n\n");
        goal.push_str(&profile.statement);
    }
    let obs = ctx.observation;
    let sections = [
        INSTRUCTIONS.to_string(),
        goal,
        format!(
            "# Observation of current step:\n\n## Currently open tabs:\n{}\n## HTML:\n{HTML_NOTE}\n\n{}",
            obs.tabs_text(),
            obs.html
        ),
        history_block(ctx.history),
        ACTION_SPACE.to_string(),
        ABSTRACT_EXAMPLE.to_string(),
    ];
    vec![ChatMessage {
        role: "user".into(),
        content: sections.join("\n\n"),
    }]
}
